use std::sync::OnceLock;

use mamc_core::diffusion::default_denoiser_spec;
use mamc_core::eval;
use mamc_core::imagecore::synth;
use mamc_core::objective::{delta_violation, loss_total, presets, profile_for_level, LEVELS};
use mamc_core::perceptual::Extractor;
use mamc_core::{ImageTensor, MaskSpec, OracleConfig, OracleMode, OracleWeights, Protector, UNetSpec};
use proptest::prelude::*;

const SIZE: usize = 16;

fn oracle() -> &'static OracleWeights {
    static O: OnceLock<OracleWeights> = OnceLock::new();
    O.get_or_init(|| OracleWeights::init(default_denoiser_spec(), SIZE, 5).unwrap())
}

fn protector() -> &'static Protector {
    static P: OnceLock<Protector> = OnceLock::new();
    P.get_or_init(|| Protector::build(UNetSpec::default(), 2).unwrap())
}

fn image() -> impl Strategy<Value = ImageTensor> {
    prop::collection::vec(0.0f32..=1.0, SIZE * SIZE * 3).prop_map(|d| ImageTensor::new(SIZE, SIZE, 3, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn protected_images_stay_in_range(img in image()) {
        let out = protector().protect(&img).unwrap();
        prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn oracle_is_pure_and_in_range(img in image(), strength in 0u8..=10, seed in any::<u64>()) {
        let cfg = OracleConfig { strength, seed, ..OracleConfig::default() };
        let a = oracle().diffuse(&img, &cfg).unwrap();
        let b = oracle().diffuse(&img, &cfg).unwrap();
        prop_assert_eq!(a.data(), b.data());
        prop_assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        if strength == 0 {
            prop_assert_eq!(a.data(), img.data());
        }
    }

    #[test]
    fn inpainting_preserves_unmasked_pixels(
        img in image(),
        top in 0usize..SIZE, left in 0usize..SIZE, h in 0usize..SIZE, w in 0usize..SIZE,
        seed in any::<u64>(),
    ) {
        let mask = MaskSpec { top, left, height: h.min(SIZE - top), width: w.min(SIZE - left) };
        let cfg = OracleConfig { mode: OracleMode::Inpaint, strength: 10, seed, ..OracleConfig::default() };
        let out = oracle().inpaint(&img, &mask, &cfg).unwrap();
        for y in 0..SIZE {
            for x in 0..SIZE {
                if !mask.contains(y, x) {
                    for c in 0..3 {
                        prop_assert!((out.get(y, x, c) - img.get(y, x, c)).abs() <= 1.0 / 255.0);
                    }
                }
            }
        }
    }

    #[test]
    fn metric_symmetry_and_bounds(a in image(), b in image()) {
        let s = eval::ssim(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
        prop_assert!((s - eval::ssim(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert_eq!(eval::psnr(&a, &b).unwrap(), eval::psnr(&b, &a).unwrap());
        prop_assert!(eval::rmse(&a, &b).unwrap() >= 0.0);
    }

    #[test]
    fn perceptual_distances_are_non_negative_and_symmetric(a in image(), b in image()) {
        let e = Extractor::bundled();
        let p = e.perceptual_distance(&a, &b).unwrap();
        let q = e.gram_distance(&a, &b).unwrap();
        prop_assert!(p >= 0.0 && q >= 0.0);
        prop_assert!((p - e.perceptual_distance(&b, &a).unwrap()).abs() < 1e-9);
        prop_assert!((q - e.gram_distance(&b, &a).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn breakdown_recomposes(i in image(), ip in image(), m in image(), level_idx in 0usize..5, seed in any::<u64>()) {
        let profile = profile_for_level(LEVELS[level_idx]).unwrap();
        let b = loss_total(&i, &ip, &m, &profile.weights, &profile, seed).unwrap();
        prop_assert!((b.total - b.recompose(&profile.weights, profile.budget_weight)).abs() <= 1e-6);
    }

    #[test]
    fn budget_hinge(img in image(), shift in 0.0f32..0.3) {
        let profile = profile_for_level(50).unwrap();
        let data: Vec<f32> = img.data().iter().map(|v| v * 0.5 + shift).collect();
        let base = ImageTensor::new(SIZE, SIZE, 3, img.data().iter().map(|v| v * 0.5).collect()).unwrap();
        let moved = ImageTensor::new(SIZE, SIZE, 3, data).unwrap();
        let v = delta_violation(&base, &moved, &profile).unwrap();
        let expected = (base.mean_abs_diff(&moved) - (profile.delta_budget + profile.epsilon)).max(0.0);
        prop_assert!((v - expected).abs() < 1e-12);
        prop_assert_eq!(delta_violation(&base, &base, &profile).unwrap(), 0.0);
    }
}

#[test]
fn presets_are_monotone() {
    let p = presets();
    assert_eq!(p.iter().map(|p| p.level).collect::<Vec<_>>(), LEVELS);
    for w in p.windows(2) {
        assert!(w[1].delta_budget > w[0].delta_budget);
        assert!(w[1].weights.attack_ratio() > w[0].weights.attack_ratio());
    }
}

#[test]
fn synthetic_corpus_is_reproducible() {
    assert_eq!(synth::corpus(12, SIZE, 3).images, synth::corpus(12, SIZE, 3).images);
}
