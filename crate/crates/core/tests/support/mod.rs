//! Brute-force reference implementations shared by the integration tests and the
//! acceptance harness. Everything here is written loop-by-loop, without the
//! tape, im2col or separable filtering used by the library.
#![allow(dead_code)]

use mamc_core::diffusion::default_denoiser_spec;
use mamc_core::gradcheck::{self, GradCheck};
use mamc_core::imagecore::synth;
use mamc_core::objective::{self, profile_for_level};
use mamc_core::perceptual::Extractor;
use mamc_core::{ImageTensor, LossWeights, OracleConfig, OracleWeights, Shape, Tensor};
use mamc_core::perceptual::feature_map_hwc;
use mamc_core::Graph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `seed`-th pair of random images: a base and a noisy, shifted variant.
pub fn seeded_pair(seed: u64, size: usize) -> (ImageTensor, ImageTensor) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let a = synth::image(seed, 0, size);
    let amp: f32 = r.gen_range(0.01..0.3);
    let data = a.data().iter().map(|&v| (v + amp * r.gen_range(-1.0f32..1.0)).clamp(0.0, 1.0)).collect();
    let b = ImageTensor::new(size, size, 3, data).unwrap();
    (a, b)
}

pub fn rmse(a: &ImageTensor, b: &ImageTensor) -> f64 {
    let (h, w, c) = a.dims();
    let mut s = 0.0;
    for y in 0..h {
        for x in 0..w {
            for k in 0..c {
                let d = 255.0 * (a.get(y, x, k) as f64 - b.get(y, x, k) as f64);
                s += d * d;
            }
        }
    }
    (s / (h * w * c) as f64).sqrt()
}

pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> f64 {
    let mse = rmse(a, b).powi(2);
    if mse == 0.0 {
        100.0
    } else {
        (10.0 * (255.0f64 * 255.0 / mse).log10()).min(100.0)
    }
}

/// SSIM from an explicit 2-D Gaussian window at every valid position.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> f64 {
    let (h, w, ch) = a.dims();
    let k = 11usize;
    let sigma = 1.5f64;
    let mut win = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            let (dy, dx) = (i as f64 - 5.0, j as f64 - 5.0);
            win[i * k + j] = (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
        }
    }
    let z: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= z);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let mut n = 0;
    for c in 0..ch {
        for y0 in 0..=h - k {
            for x0 in 0..=w - k {
                let (mut mx, mut my) = (0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        mx += win[i * k + j] * a.get(y0 + i, x0 + j, c) as f64;
                        my += win[i * k + j] * b.get(y0 + i, x0 + j, c) as f64;
                    }
                }
                let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        let p = a.get(y0 + i, x0 + j, c) as f64 - mx;
                        let q = b.get(y0 + i, x0 + j, c) as f64 - my;
                        vx += win[i * k + j] * p * p;
                        vy += win[i * k + j] * q * q;
                        cov += win[i * k + j] * p * q;
                    }
                }
                total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                n += 1;
            }
        }
    }
    total / n as f64
}

/// Direct 3×3 convolution, `[c, h, w]` planes.
pub fn conv(x: &[f64], cin: usize, h: usize, w: usize, weight: &[f32], bias: &[f32], cout: usize, stride: usize, pad: usize) -> (Vec<f64>, usize, usize) {
    let ho = (h + 2 * pad - 3) / stride + 1;
    let wo = (w + 2 * pad - 3) / stride + 1;
    let mut out = vec![0.0; cout * ho * wo];
    for o in 0..cout {
        for y in 0..ho {
            for xx in 0..wo {
                let mut s = bias[o] as f64;
                for i in 0..cin {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let iy = (y * stride + ky) as i64 - pad as i64;
                            let ix = (xx * stride + kx) as i64 - pad as i64;
                            if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                continue;
                            }
                            let v = x[i * h * w + iy as usize * w + ix as usize];
                            s += weight[((o * cin + i) * 3 + ky) * 3 + kx] as f64 * v;
                        }
                    }
                }
                out[o * ho * wo + y * wo + xx] = s;
            }
        }
    }
    (out, ho, wo)
}

/// `(channels, h, w, values)` per extractor level.
pub type Level = (usize, usize, usize, Vec<f64>);

pub fn features(ext: &Extractor, img: &ImageTensor) -> Vec<Level> {
    let (h, w, _) = img.dims();
    let mut x = vec![0.0; 3 * h * w];
    for y in 0..h {
        for xx in 0..w {
            for c in 0..3 {
                x[c * h * w + y * w + xx] = 2.0 * img.get(y, xx, c) as f64 - 1.0;
            }
        }
    }
    let p = ext.params();
    let (mut cin, mut hh, mut ww) = (3, h, w);
    let mut out = Vec::new();
    for l in 0..ext.levels() {
        let wid = p.find(&format!("level{l}.weight")).unwrap();
        let bid = p.find(&format!("level{l}.bias")).unwrap();
        let cout = p.shape(wid).n;
        let (mut y, ho, wo) = conv(&x, cin, hh, ww, p.values(wid), p.values(bid), cout, 2, 1);
        for v in &mut y {
            *v = *v / (1.0 + (-*v).exp());
        }
        out.push((cout, ho, wo, y.clone()));
        x = y;
        cin = cout;
        hh = ho;
        ww = wo;
    }
    out
}

pub fn perceptual_levels(fa: &[Level], fb: &[Level]) -> f64 {
    let mut total = 0.0;
    for ((c, h, w, a), (_, _, _, b)) in fa.iter().zip(fb) {
        let plane = h * w;
        let mut level = 0.0;
        for p in 0..plane {
            let na = (0..*c).map(|k| a[k * plane + p].powi(2)).sum::<f64>() + 1e-10;
            let nb = (0..*c).map(|k| b[k * plane + p].powi(2)).sum::<f64>() + 1e-10;
            for k in 0..*c {
                let d = a[k * plane + p] / na.sqrt() - b[k * plane + p] / nb.sqrt();
                level += d * d;
            }
        }
        total += level / plane as f64;
    }
    total
}

/// `G[p][q] = Σ_xy F_p F_q / (c·h·w)`.
pub fn gram(c: usize, h: usize, w: usize, f: &[f64]) -> Vec<f64> {
    let plane = h * w;
    let mut g = vec![0.0; c * c];
    for p in 0..c {
        for q in 0..c {
            let mut s = 0.0;
            for i in 0..plane {
                s += f[p * plane + i] * f[q * plane + i];
            }
            g[p * c + q] = s / (c * plane) as f64;
        }
    }
    g
}

pub fn gram_levels(fa: &[Level], fb: &[Level]) -> f64 {
    let mut total = 0.0;
    for ((c, h, w, a), (_, _, _, b)) in fa.iter().zip(fb) {
        let ga = gram(*c, *h, *w, a);
        let gb = gram(*c, *h, *w, b);
        total += ga.iter().zip(&gb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    }
    total / fa.len() as f64
}

/// FID through the eigenvalues of the (non-symmetric) product `Σ_a Σ_b`.
pub fn fid(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    use nalgebra::{DMatrix, DVector};
    let fit = |x: &[Vec<f64>]| {
        let d = x[0].len();
        let n = x.len() as f64;
        let mu = x.iter().fold(DVector::zeros(d), |acc, v| acc + DVector::from_column_slice(v)) / n;
        let mut cov = DMatrix::<f64>::zeros(d, d);
        for v in x {
            let c = DVector::from_column_slice(v) - &mu;
            cov += &c * c.transpose();
        }
        (mu, cov / (n - 1.0))
    };
    let (ma, ca) = fit(a);
    let (mb, cb) = fit(b);
    let tr: f64 = (&ca * &cb).complex_eigenvalues().iter().map(|z| z.re.max(0.0).sqrt()).sum();
    (&ma - &mb).norm_squared() + ca.trace() + cb.trace() - 2.0 * tr
}

/// Oracle-level checks on `n` seeded pairs; returns the worst errors
/// `(psnr, rmse, ssim)`.
pub fn metric_errors(n: u64, size: usize) -> (f64, f64, f64) {
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    for seed in 0..n {
        let (a, b) = seeded_pair(seed, size);
        worst.0 = worst.0.max((mamc_core::eval::psnr(&a, &b).unwrap() - psnr(&a, &b)).abs());
        worst.1 = worst.1.max((mamc_core::eval::rmse(&a, &b).unwrap() - rmse(&a, &b)).abs());
        worst.2 = worst.2.max((mamc_core::eval::ssim(&a, &b).unwrap() - ssim(&a, &b)).abs());
    }
    worst
}

pub const GRAD_SIZE: usize = 8;
pub const GRAD_TOL: f64 = 1e-3;
pub const GRAD_FLOOR: f64 = 1e-6;

/// A tiny oracle plus a config whose plan has exactly two denoising steps.
pub fn two_step_oracle() -> (OracleWeights, OracleConfig) {
    let oracle = OracleWeights::init(default_denoiser_spec(), GRAD_SIZE, 11).unwrap();
    let cfg = OracleConfig {
        strength: 5,
        steps: 4,
        seed: 3,
        ..OracleConfig::default()
    };
    assert_eq!(cfg.timesteps().len(), 3, "plan {:?}", cfg.timesteps());
    (oracle, cfg)
}

fn tensor(img: &ImageTensor) -> Tensor<f64> {
    img.to_tensor()
}

pub fn grad_inputs(seed: u64) -> (Tensor<f64>, Tensor<f64>, Tensor<f64>, Tensor<f64>) {
    let i = synth::image(seed, 0, GRAD_SIZE);
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    // I' = I + small non-zero δ, well inside the budget so the hinge is flat.
    let ip: Vec<f32> = i
        .data()
        .iter()
        .map(|&v| {
            let d = r.gen_range(0.004f32..0.012) * if r.gen_bool(0.5) { 1.0 } else { -1.0 };
            (v.clamp(0.05, 0.95) + d).clamp(0.0, 1.0)
        })
        .collect();
    let ip = ImageTensor::new(GRAD_SIZE, GRAD_SIZE, 3, ip).unwrap();
    let m = synth::image(seed, 1, GRAD_SIZE);
    let n = objective::noise_image(seed, GRAD_SIZE, GRAD_SIZE);
    (tensor(&i), tensor(&ip), tensor(&m), tensor(&n))
}

/// Finite-difference checks of every objective term with respect to `I'`, plus the
/// full objective with `M = oracle(I')`.
pub fn gradient_suite(seed: u64) -> Vec<(&'static str, GradCheck)> {
    let ext = Extractor::bundled();
    let (i, ip, m, n) = grad_inputs(seed);
    let w = LossWeights::default();
    let eps = 1e-6;
    let mut out = Vec::new();
    out.push((
        "reconstruction",
        gradcheck::check(&ip, eps, GRAD_FLOOR, |g, x| {
            let be = ext.bind(g);
            let iv = g.constant(i.clone());
            let r = objective::graph::reconstruction(g, &be, iv, x, &w);
            g.mean_all(r)
        }),
    ));
    out.push((
        "content",
        gradcheck::check(&ip, eps, GRAD_FLOOR, |g, x| {
            let be = ext.bind(g);
            let mv = g.constant(m.clone());
            let r = objective::graph::content(g, &be, x, mv);
            g.mean_all(r)
        }),
    ));
    out.push((
        "style",
        gradcheck::check(&ip, eps, GRAD_FLOOR, |g, x| {
            let be = ext.bind(g);
            let mv = g.constant(m.clone());
            let r = objective::graph::style(g, &be, x, mv);
            g.mean_all(r)
        }),
    ));
    out.push((
        "noise",
        gradcheck::check(&ip, eps, GRAD_FLOOR, |g, x| {
            let be = ext.bind(g);
            let nv = g.constant(n.clone());
            let r = objective::graph::noise(g, &be, x, nv);
            g.mean_all(r)
        }),
    ));
    let (oracle, cfg) = two_step_oracle();
    let profile = profile_for_level(50).unwrap();
    out.push((
        "total_through_oracle",
        gradcheck::check(&ip, eps, GRAD_FLOOR, |g, x| {
            let be = ext.bind(g);
            let bo = oracle.bind(g);
            let iv = g.constant(i.clone());
            let nv = g.constant(n.clone());
            let mv = bo.sample(g, x, &cfg, &[cfg.seed], None);
            let t = objective::graph::total(g, &be, iv, x, mv, nv, &profile.weights, &profile);
            g.mean_all(t.total)
        }),
    ));
    out
}

/// Hand-sized random feature maps: levels of `(c, h, w)`.
pub fn hand_features(seed: u64, dims: &[(usize, usize, usize)]) -> Vec<Level> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    dims.iter()
        .map(|&(c, h, w)| (c, h, w, (0..c * h * w).map(|_| r.gen_range(-2.0..2.0)).collect()))
        .collect()
}

fn to_tensor(l: &Level) -> Tensor<f64> {
    let (c, h, w, v) = l;
    Tensor::new(Shape::new(1, *c, *h, *w), v.clone())
}

/// Library perceptual and Gram distances on explicit feature maps.
pub fn library_distances(fa: &[Level], fb: &[Level]) -> (f64, f64) {
    let ext = Extractor::bundled();
    let mut g = Graph::<f64>::new();
    let be = ext.bind(&mut g);
    let va: Vec<_> = fa.iter().map(|l| g.constant(to_tensor(l))).collect();
    let vb: Vec<_> = fb.iter().map(|l| g.constant(to_tensor(l))).collect();
    let p = be.distance(&mut g, &va, &vb);
    let q = be.gram_distance(&mut g, &va, &vb);
    (g.value(p).item(), g.value(q).item())
}

/// Worst absolute error of perceptual, Gram-distance and per-entry Gram values.
pub fn gram_perceptual_errors(cases: u64) -> f64 {
    let dims = [(2, 2, 3), (3, 3, 3), (4, 2, 2)];
    let mut worst = 0.0f64;
    for seed in 0..cases {
        let fa = hand_features(seed, &dims);
        let fb = hand_features(seed + 1000, &dims);
        let (p, q) = library_distances(&fa, &fb);
        worst = worst.max((p - perceptual_levels(&fa, &fb)).abs());
        worst = worst.max((q - gram_levels(&fa, &fb)).abs());
        for (level, (c, h, w, v)) in fa.iter().enumerate() {
            let mut hwc = vec![0.0; v.len()];
            for ch in 0..*c {
                for p in 0..h * w {
                    hwc[p * c + ch] = v[ch * h * w + p];
                }
            }
            let lib = mamc_core::perceptual::gram(level, &feature_map_hwc(*h, *w, *c, &hwc)).unwrap();
            let ours = gram(*c, *h, *w, v);
            for (x, y) in lib.matrix.iter().zip(&ours) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    worst
}

/// Direct white-box attack on the oracle, no protector: signed-gradient ascent on
/// `mean (M(I + δ) − M(I))²` with `|δ| ≤ budget` per pixel. Returns mean
/// `(PSNR(I, I + δ), PSNR(M(I), M(I + δ)))`, an empirical ceiling on how far any
/// perturbation of that size moves the oracle output.
pub fn oracle_attack_ceiling(oracle: &OracleWeights, images: &[ImageTensor], cfg: &OracleConfig, budget: f32, iters: usize) -> (f64, f64) {
    let seeds = mamc_core::eval::pair_seeds(cfg.seed, images.len());
    let stack = |imgs: &[ImageTensor]| Tensor::<f32>::stack(&imgs.iter().map(|i| i.to_tensor()).collect::<Vec<_>>());
    let base = stack(images);
    let target = oracle.diffuse_batch(images, cfg, &seeds).unwrap();
    let tt = stack(&target);
    let mut r = ChaCha8Rng::seed_from_u64(0xa77);
    let mut delta: Vec<f32> = (0..base.data.len()).map(|_| r.gen_range(-0.5..0.5) * budget).collect();
    let step = budget / 5.0;
    let apply = |delta: &[f32]| -> Tensor<f32> {
        Tensor::new(base.shape, base.data.iter().zip(delta).map(|(b, d)| (b + d).clamp(0.0, 1.0)).collect())
    };
    for _ in 0..iters {
        let mut g = Graph::<f32>::new();
        let bo = oracle.bind(&mut g);
        let xv = g.leaf(apply(&delta));
        let m = bo.sample(&mut g, xv, cfg, &seeds, None);
        let t = g.constant(tt.clone());
        let d = g.sub(m, t);
        let sq = g.square(d);
        let loss = g.mean_all(sq);
        let grads = g.backward(loss);
        for (dd, gg) in delta.iter_mut().zip(grads.get(xv).unwrap()) {
            *dd = (*dd + step * gg.signum()).clamp(-budget, budget);
        }
    }
    let attacked: Vec<ImageTensor> = (0..images.len())
        .map(|k| ImageTensor::from_tensor(&apply(&delta), k).unwrap())
        .collect();
    let diffused = oracle.diffuse_batch(&attacked, cfg, &seeds).unwrap();
    let mean = |a: &[ImageTensor], b: &[ImageTensor]| {
        a.iter().zip(b).map(|(x, y)| mamc_core::eval::psnr(x, y).unwrap()).sum::<f64>() / a.len() as f64
    };
    (mean(images, &attacked), mean(&target, &diffused))
}
