mod support;

use mamc_core::eval::metrics::fid_from_embeddings;
use mamc_core::eval;
use mamc_core::imagecore::synth;
use mamc_core::perceptual::Extractor;
use mamc_core::ImageTensor;

#[test]
fn metrics_match_brute_force_on_seeded_pairs() {
    let (psnr, rmse, ssim) = support::metric_errors(20, 32);
    assert!(psnr <= 1e-6, "psnr error {psnr}");
    assert!(rmse <= 1e-6, "rmse error {rmse}");
    assert!(ssim <= 1e-4, "ssim error {ssim}");
}

#[test]
fn ssim_of_identical_images_is_exactly_one() {
    for seed in 0..5 {
        let a = synth::image(seed, 0, 24);
        assert_eq!(eval::ssim(&a, &a).unwrap(), 1.0);
    }
}

#[test]
fn constant_offset_psnr() {
    let a = ImageTensor::filled(32, 32, 100.0 / 255.0).unwrap();
    let b = ImageTensor::filled(32, 32, 110.0 / 255.0).unwrap();
    assert!((eval::psnr(&a, &b).unwrap() - 28.13).abs() <= 0.01);
}

#[test]
fn fid_of_identical_sets_is_zero() {
    let set: Vec<_> = (0..12).map(|i| synth::image(4, i, 16)).collect();
    let f = eval::fid(&set, &set, Extractor::bundled()).unwrap();
    assert!(f.value <= 1e-6, "{}", f.value);
}

#[test]
fn fid_matches_product_eigenvalue_route() {
    use rand::{Rng, SeedableRng};
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(8);
    let mut draw = |shift: f64| -> Vec<Vec<f64>> {
        (0..40).map(|_| (0..5).map(|_| r.gen_range(-1.0..1.0) + shift).collect()).collect()
    };
    let a = draw(0.0);
    let b = draw(0.3);
    let lib = fid_from_embeddings(&a, &b).unwrap();
    assert!(!lib.jittered);
    assert!((lib.value - support::fid(&a, &b)).abs() < 1e-8);
}

#[test]
fn extractor_matches_direct_convolution() {
    let ext = Extractor::bundled();
    for seed in 0..3 {
        let img = synth::image(seed, 2, 16);
        let lib = ext.extract_features(&img).unwrap();
        let ours = support::features(ext, &img);
        for (t, (c, h, w, v)) in lib.levels.iter().zip(&ours) {
            assert_eq!((t.shape.c, t.shape.h, t.shape.w), (*c, *h, *w));
            for (x, y) in t.data.iter().zip(v) {
                assert!((x - y).abs() < 1e-9);
            }
        }
        let other = synth::image(seed, 3, 16);
        let fo = support::features(ext, &other);
        let p = ext.perceptual_distance(&img, &other).unwrap();
        assert!((p - support::perceptual_levels(&ours, &fo)).abs() < 1e-9);
        let q = ext.gram_distance(&img, &other).unwrap();
        assert!((q - support::gram_levels(&ours, &fo)).abs() < 1e-9);
    }
}

#[test]
fn gram_and_perceptual_on_hand_sized_maps() {
    let err = support::gram_perceptual_errors(10);
    assert!(err <= 1e-9, "{err}");
}
