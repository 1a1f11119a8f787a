//! Fixed convolutional feature extractor, perceptual distance and Gram-matrix distance.
//!
//! The extractor is three stride-2 3×3 convolutions (16/32/64 channels) with SiLU,
//! applied to images mapped onto `[-1, 1]`. Its weights are seeded, frozen and
//! shipped as `assets/extractor.mamc` so every machine sees the same features.
//!
//! Perceptual distance sums, over levels, the spatial mean of the squared
//! Euclidean distance between channel-unit-normalized feature vectors.

use std::sync::OnceLock;

use serde_json::json;

use crate::autograd::{Graph, Var};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::imagecore::ImageTensor;
use crate::nn::{rng, Bound, Conv, ParamStore};
use crate::tensor::{Real, Shape, Tensor};

pub const EXTRACTOR_SEED: u64 = 0x1ee7;
pub const EXTRACTOR_CHANNELS: [usize; 3] = [16, 32, 64];
const NORM_EPS: f64 = 1e-10;
const ASSET: &[u8] = include_bytes!("../assets/extractor.mamc");

#[derive(Debug, Clone)]
pub struct Extractor {
    params: ParamStore,
    convs: Vec<Conv>,
}

/// Per-level activations of one image, each `[1, c_j, h_j, w_j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    pub levels: Vec<Tensor<f64>>,
}

/// Normalized channel-correlation matrix of one activation level.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub level: usize,
    pub size: usize,
    /// Row-major `size × size`.
    pub matrix: Vec<f64>,
}

impl GramMatrix {
    pub fn at(&self, p: usize, q: usize) -> f64 {
        self.matrix[p * self.size + q]
    }
}

impl Extractor {
    /// Freshly seeded weights (the bundled asset is exactly `seeded(EXTRACTOR_SEED)`).
    pub fn seeded(seed: u64) -> Self {
        let mut params = ParamStore::new();
        let mut r = rng(seed, 0);
        let mut cin = 3;
        let mut convs = Vec::new();
        for (i, &c) in EXTRACTOR_CHANNELS.iter().enumerate() {
            convs.push(Conv::new(&mut params, &format!("level{i}"), cin, c, 3, 2, 1.0, &mut r));
            cin = c;
        }
        Self { params, convs }
    }

    /// The versioned extractor shipped with the crate.
    pub fn bundled() -> &'static Extractor {
        static BUNDLED: OnceLock<Extractor> = OnceLock::new();
        BUNDLED.get_or_init(|| {
            let c = checkpoint::from_bytes(ASSET).expect("bundled extractor asset is valid");
            Extractor::from_params(c.arrays).expect("bundled extractor layout")
        })
    }

    /// Rebuilds an extractor from weights named `level{i}.weight` / `level{i}.bias`.
    pub fn from_params(params: ParamStore) -> Result<Self> {
        let mut convs = Vec::new();
        let mut cin = 3;
        for i in 0.. {
            let (Some(weight), Some(bias)) = (
                params.find(&format!("level{i}.weight")),
                params.find(&format!("level{i}.bias")),
            ) else {
                break;
            };
            let s = params.shape(weight);
            if s.c != cin || s.h != 3 || s.w != 3 {
                return Err(Error::integrity(format!("level{i}.weight"), format!("unexpected shape {s}")));
            }
            cin = s.n;
            convs.push(Conv {
                weight,
                bias,
                stride: 2,
                pad: 1,
            });
        }
        if convs.len() < 3 {
            return Err(Error::integrity("levels", format!("{} levels, need at least 3", convs.len())));
        }
        Ok(Self { params, convs })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn levels(&self) -> usize {
        self.convs.len()
    }

    /// Smallest side that survives every stride-2 level.
    pub fn min_side(&self) -> usize {
        1 << self.convs.len()
    }

    pub fn to_container_bytes(&self) -> Vec<u8> {
        checkpoint::to_bytes(
            &json!({"kind": "feature-extractor", "seed": EXTRACTOR_SEED, "channels": EXTRACTOR_CHANNELS}),
            &self.params,
        )
    }

    /// Binds the frozen weights onto a graph.
    pub fn bind<'a, T: Real>(&'a self, g: &mut Graph<T>) -> BoundExtractor<'a> {
        BoundExtractor {
            ext: self,
            bound: self.params.bind(g, false),
        }
    }

    pub fn extract_features(&self, img: &ImageTensor) -> Result<FeatureStack> {
        self.check_size(img.height(), img.width())?;
        let mut g = Graph::<f64>::new();
        let be = self.bind(&mut g);
        let x = g.constant(img.to_tensor());
        let levels = be.features(&mut g, x);
        Ok(FeatureStack {
            levels: levels.iter().map(|&v| g.value(v).clone()).collect(),
        })
    }

    fn check_size(&self, h: usize, w: usize) -> Result<()> {
        if h < self.min_side() || w < self.min_side() {
            return Err(Error::Size(format!(
                "{h}x{w} image is below the extractor's {0}x{0} receptive-field minimum",
                self.min_side()
            )));
        }
        Ok(())
    }

    fn pair_graph(
        &self,
        a: &ImageTensor,
        b: &ImageTensor,
        f: impl FnOnce(&mut Graph<f64>, &BoundExtractor, &[Var], &[Var]) -> Var,
    ) -> Result<f64> {
        a.same_shape(b)?;
        self.check_size(a.height(), a.width())?;
        let mut g = Graph::<f64>::new();
        let be = self.bind(&mut g);
        let xa = g.constant(a.to_tensor());
        let xb = g.constant(b.to_tensor());
        let fa = be.features(&mut g, xa);
        let fb = be.features(&mut g, xb);
        let d = f(&mut g, &be, &fa, &fb);
        Ok(g.value(d).item())
    }

    /// Perceptual distance 𝒫(a, b).
    pub fn perceptual_distance(&self, a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
        self.pair_graph(a, b, |g, be, fa, fb| be.distance(g, fa, fb))
    }

    /// Mean over levels of the Frobenius norm of Gram differences.
    pub fn gram_distance(&self, a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
        self.pair_graph(a, b, |g, be, fa, fb| be.gram_distance(g, fa, fb))
    }

    /// Global-average-pooled final level, used as the FID embedding.
    pub fn embed(&self, img: &ImageTensor) -> Result<Vec<f64>> {
        let stack = self.extract_features(img)?;
        let last = stack.levels.last().expect("at least 3 levels");
        let s = last.shape;
        Ok(last
            .data
            .chunks(s.plane())
            .map(|plane| plane.iter().sum::<f64>() / s.plane() as f64)
            .collect())
    }
}

/// An [`Extractor`] placed on a specific graph.
pub struct BoundExtractor<'a> {
    ext: &'a Extractor,
    bound: Bound,
}

impl BoundExtractor<'_> {
    /// Level activations for a `[n, 3, h, w]` image batch in `[0, 1]`.
    pub fn features<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Vec<Var> {
        let mut h = g.scale(x, 2.0);
        h = g.add_scalar(h, -1.0);
        let mut out = Vec::with_capacity(self.ext.convs.len());
        for conv in &self.ext.convs {
            h = conv.forward(g, &self.bound, h);
            h = g.silu(h);
            out.push(h);
        }
        out
    }

    /// Per-sample perceptual distance, `[n, 1, 1, 1]`.
    pub fn distance<T: Real>(&self, g: &mut Graph<T>, fa: &[Var], fb: &[Var]) -> Var {
        let mut total: Option<Var> = None;
        for (&a, &b) in fa.iter().zip(fb) {
            let plane = g.shape(a).plane();
            let na = g.channel_norm(a, NORM_EPS);
            let nb = g.channel_norm(b, NORM_EPS);
            let d = g.sub(na, nb);
            let sq = g.square(d);
            let s = g.sum_samples(sq);
            let level = g.scale(s, 1.0 / plane as f64);
            total = Some(match total {
                Some(t) => g.add(t, level),
                None => level,
            });
        }
        total.expect("at least one level")
    }

    /// Per-sample Gram distance, `[n, 1, 1, 1]`.
    pub fn gram_distance<T: Real>(&self, g: &mut Graph<T>, fa: &[Var], fb: &[Var]) -> Var {
        let mut total: Option<Var> = None;
        for (&a, &b) in fa.iter().zip(fb) {
            let ga = g.gram(a);
            let gb = g.gram(b);
            let d = g.sub(ga, gb);
            let sq = g.square(d);
            let s = g.sum_samples(sq);
            let norm = g.sqrt(s);
            total = Some(match total {
                Some(t) => g.add(t, norm),
                None => norm,
            });
        }
        let t = total.expect("at least one level");
        g.scale(t, 1.0 / fa.len() as f64)
    }
}

/// Gram matrix of a single-sample feature map `[1, c, h, w]`.
pub fn gram(level: usize, features: &Tensor<f64>) -> Result<GramMatrix> {
    let s = features.shape;
    if s.numel() == 0 || s.n != 1 {
        return Err(Error::Shape(format!("gram needs one non-empty feature map, got {s}")));
    }
    let mut g = Graph::<f64>::new();
    let x = g.constant(features.clone());
    let m = g.gram(x);
    Ok(GramMatrix {
        level,
        size: s.c,
        matrix: g.value(m).data.clone(),
    })
}

/// Builds a `[1, c, h, w]` feature map from HWC-ordered values.
pub fn feature_map_hwc(h: usize, w: usize, c: usize, hwc: &[f64]) -> Tensor<f64> {
    let mut data = vec![0.0; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                data[ch * h * w + y * w + x] = hwc[(y * w + x) * c + ch];
            }
        }
    }
    Tensor::new(Shape::new(1, c, h, w), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;
    use crate::imagecore::synth;
    use proptest::prelude::*;
    use rand::Rng;

    fn ext() -> &'static Extractor {
        Extractor::bundled()
    }

    #[test]
    fn bundled_asset_matches_seeded_generation() {
        assert_eq!(ext().params(), Extractor::seeded(EXTRACTOR_SEED).params());
    }

    /// Regenerates `assets/extractor.mamc`. Run with `--ignored` after changing the seed.
    #[test]
    #[ignore]
    fn regenerate_extractor_asset() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/assets/extractor.mamc");
        std::fs::write(path, Extractor::seeded(EXTRACTOR_SEED).to_container_bytes()).unwrap();
    }

    #[test]
    fn level_shapes_at_64() {
        let img = synth::image(1, 0, 64);
        let f = ext().extract_features(&img).unwrap();
        let dims: Vec<_> = f.levels.iter().map(|t| (t.shape.c, t.shape.h, t.shape.w)).collect();
        assert_eq!(dims, vec![(16, 32, 32), (32, 16, 16), (64, 8, 8)]);
    }

    #[test]
    fn features_are_deterministic_and_finite() {
        let img = synth::image(1, 4, 32);
        assert_eq!(ext().extract_features(&img).unwrap(), ext().extract_features(&img.clone()).unwrap());
        let zero = ImageTensor::filled(16, 16, 0.0).unwrap();
        let f = ext().extract_features(&zero).unwrap();
        assert!(f.levels.iter().all(|t| t.all_finite()));
    }

    #[test]
    fn identity_and_symmetry() {
        let a = synth::image(2, 0, 32);
        let b = synth::image(2, 1, 32);
        assert_eq!(ext().perceptual_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(ext().gram_distance(&a, &a).unwrap(), 0.0);
        let ab = ext().perceptual_distance(&a, &b).unwrap();
        let ba = ext().perceptual_distance(&b, &a).unwrap();
        assert!(ab > 0.0);
        assert!((ab - ba).abs() < 1e-12);
        assert!(ext().gram_distance(&a, &b).unwrap() > 0.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = synth::image(2, 0, 32);
        let b = synth::image(2, 0, 16);
        assert!(matches!(ext().perceptual_distance(&a, &b), Err(Error::Shape(_))));
        assert!(matches!(ext().gram_distance(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn gram_of_constant_map() {
        let (h, w, c, v) = (3, 4, 5, 0.7);
        let f = feature_map_hwc(h, w, c, &vec![v; h * w * c]);
        let g = gram(0, &f).unwrap();
        // (1/(hwc)) Σ v² = v² · hw/(hwc) = v²/c
        for x in &g.matrix {
            assert!((x - v * v / c as f64).abs() < 1e-12, "{x}");
        }
    }

    #[test]
    fn gram_hand_sized_matches_double_loop() {
        // 2x2x2 map, HWC order
        let hwc = [1.0, -2.0, 0.5, 3.0, -1.5, 0.25, 2.0, 1.0];
        let f = feature_map_hwc(2, 2, 2, &hwc);
        let g = gram(0, &f).unwrap();
        let mut want = [[0.0f64; 2]; 2];
        for p in 0..2 {
            for q in 0..2 {
                for xy in 0..4 {
                    want[p][q] += hwc[xy * 2 + p] * hwc[xy * 2 + q];
                }
                want[p][q] /= 8.0;
            }
        }
        // G00 = (1 + .25 + 2.25 + 4)/8, G01 = (-2 + 1.5 - .375 + 2)/8, G11 = (4 + 9 + .0625 + 1)/8
        assert_eq!(want[0][0], 7.5 / 8.0);
        assert_eq!(want[0][1], 1.125 / 8.0);
        assert_eq!(want[1][1], 14.0625 / 8.0);
        for p in 0..2 {
            for q in 0..2 {
                assert!((g.at(p, q) - want[p][q]).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn empty_feature_map_is_an_error() {
        let t = Tensor::<f64>::new(Shape::new(1, 0, 2, 2), vec![]);
        assert!(gram(0, &t).is_err());
    }

    #[test]
    fn gram_is_psd_on_random_maps() {
        let mut r = rng(11, 0);
        for _ in 0..1000 {
            let (h, w, c) = (r.gen_range(1..5), r.gen_range(1..5), r.gen_range(1..6));
            let hwc: Vec<f64> = (0..h * w * c).map(|_| r.gen_range(-2.0..2.0)).collect();
            let g = gram(0, &feature_map_hwc(h, w, c, &hwc)).unwrap();
            let m = nalgebra::DMatrix::from_row_slice(c, c, &g.matrix);
            assert!((m.clone() - m.transpose()).abs().max() < 1e-12);
            let min = m.symmetric_eigen().eigenvalues.min();
            assert!(min >= -1e-8, "min eigenvalue {min}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let a = synth::image(5, 0, 8).to_tensor::<f64>();
        let b = synth::image(5, 1, 8).to_tensor::<f64>();
        let e = ext();
        let perceptual = gradcheck::check(&a, 1e-6, 1e-6, |g, x| {
            let be = e.bind(g);
            let other = g.constant(b.clone());
            let fx = be.features(g, x);
            let fo = be.features(g, other);
            let d = be.distance(g, &fx, &fo);
            g.mean_all(d)
        });
        assert!(perceptual.checked > 100);
        assert!(perceptual.max_rel_err <= 1e-3, "{perceptual:?}");
        let style = gradcheck::check(&a, 1e-6, 1e-6, |g, x| {
            let be = e.bind(g);
            let other = g.constant(b.clone());
            let fx = be.features(g, x);
            let fo = be.features(g, other);
            let d = be.gram_distance(g, &fx, &fo);
            g.mean_all(d)
        });
        assert!(style.checked > 100);
        assert!(style.max_rel_err <= 1e-3, "{style:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn distance_symmetric_nonnegative(s1 in 0u64..500, s2 in 0u64..500) {
            let a = synth::image(s1, 0, 16);
            let b = synth::image(s2, 1, 16);
            let ab = ext().perceptual_distance(&a, &b).unwrap();
            let ba = ext().perceptual_distance(&b, &a).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
            prop_assert!(ext().gram_distance(&a, &b).unwrap() >= 0.0);
        }
    }
}
