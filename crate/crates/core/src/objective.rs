//! Loss terms, their combination and the balance-level presets.
//!
//! Every term is a non-negative magnitude:
//!
//! * reconstruction `L_R = α_R1·𝒫(I, I') + α_R2·mean((I − I')²)`
//! * content `L_C = 𝒫(I', M(I'))`
//! * style `L_S = gram_distance(I', M(I'))`
//! * noise `L_N = 𝒫(M(I'), N)` with `N` a clipped Gaussian image
//!
//! and the combined objective applies each attack sign once:
//! `L = L_R − α_C·L_C − α_S·L_S + α_N·L_N + λ·max(0, mean|δ| − (φ + ε))`.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::imagecore::ImageTensor;
use crate::nn::rng;
use crate::perceptual::{BoundExtractor, Extractor};
use crate::tensor::{Real, Tensor};

pub const NOISE_MEAN: f64 = 0.5;
pub const NOISE_STD: f64 = 0.25;
pub const LEVELS: [u32; 5] = [10, 30, 50, 70, 90];
const PRESETS: &str = include_str!("../assets/presets.toml");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha_r1: f64,
    pub alpha_r2: f64,
    pub alpha_c: f64,
    pub alpha_s: f64,
    pub alpha_n: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha_r1: 1.0,
            alpha_r2: 1.0,
            alpha_c: 1.0,
            alpha_s: 0.5,
            alpha_n: 1.0,
        }
    }
}

impl LossWeights {
    pub const ZERO: LossWeights = LossWeights {
        alpha_r1: 0.0,
        alpha_r2: 0.0,
        alpha_c: 0.0,
        alpha_s: 0.0,
        alpha_n: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.named() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} = {v} must be finite and non-negative")));
            }
        }
        Ok(())
    }

    fn named(&self) -> [(&'static str, f64); 5] {
        [
            ("alpha_r1", self.alpha_r1),
            ("alpha_r2", self.alpha_r2),
            ("alpha_c", self.alpha_c),
            ("alpha_s", self.alpha_s),
            ("alpha_n", self.alpha_n),
        ]
    }

    /// Attack weights over reconstruction weights.
    pub fn attack_ratio(&self) -> f64 {
        (self.alpha_c + self.alpha_s + self.alpha_n) / (self.alpha_r1 + self.alpha_r2)
    }
}

/// One preset: loss weights plus the perturbation budget `φ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalanceProfile {
    pub level: u32,
    pub weights: LossWeights,
    /// Maximum mean absolute perturbation, in `[0, 1]` intensity units.
    pub delta_budget: f64,
    /// Slack added to the budget before the hinge engages.
    pub epsilon: f64,
    /// Weight of the budget hinge in the total.
    pub budget_weight: f64,
}

#[derive(Debug, Deserialize)]
struct PresetFile {
    version: u32,
    epsilon: f64,
    budget_weight: f64,
    level: Vec<PresetRow>,
}

#[derive(Debug, Deserialize)]
struct PresetRow {
    level: u32,
    alpha_r1: f64,
    alpha_r2: f64,
    alpha_c: f64,
    alpha_s: f64,
    alpha_n: f64,
    phi: f64,
}

/// Parses a preset table and checks the ordering invariants.
pub fn parse_presets(text: &str) -> Result<Vec<BalanceProfile>> {
    let file: PresetFile = toml::from_str(text).map_err(|e| Error::Config(format!("preset table: {e}")))?;
    if file.version != 1 {
        return Err(Error::Config(format!("preset table version {} is not supported", file.version)));
    }
    let mut out: Vec<BalanceProfile> = file
        .level
        .into_iter()
        .map(|r| BalanceProfile {
            level: r.level,
            weights: LossWeights {
                alpha_r1: r.alpha_r1,
                alpha_r2: r.alpha_r2,
                alpha_c: r.alpha_c,
                alpha_s: r.alpha_s,
                alpha_n: r.alpha_n,
            },
            delta_budget: r.phi,
            epsilon: file.epsilon,
            budget_weight: file.budget_weight,
        })
        .collect();
    out.sort_by_key(|p| p.level);
    for p in &out {
        p.weights.validate()?;
        if !(p.delta_budget >= 0.0 && p.delta_budget.is_finite()) {
            return Err(Error::Config(format!("level {}: phi must be non-negative", p.level)));
        }
    }
    for w in out.windows(2) {
        if w[0].level == w[1].level {
            return Err(Error::Config(format!("level {} listed twice", w[0].level)));
        }
        if w[1].delta_budget <= w[0].delta_budget || w[1].weights.attack_ratio() <= w[0].weights.attack_ratio() {
            return Err(Error::Config(format!(
                "level {} must have a larger budget and attack ratio than level {}",
                w[1].level, w[0].level
            )));
        }
    }
    Ok(out)
}

/// The bundled preset table, ordered by level.
pub fn presets() -> &'static [BalanceProfile] {
    static TABLE: OnceLock<Vec<BalanceProfile>> = OnceLock::new();
    TABLE.get_or_init(|| parse_presets(PRESETS).expect("bundled presets are valid"))
}

pub fn profile_for_level(level: u32) -> Result<BalanceProfile> {
    presets().iter().find(|p| p.level == level).copied().ok_or_else(|| {
        let valid: Vec<String> = presets().iter().map(|p| p.level.to_string()).collect();
        Error::Config(format!("unknown balance level {level}; valid levels: {}", valid.join(", ")))
    })
}

/// Per-term values of one objective evaluation (batch means).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Weighted reconstruction `L_R` (already includes α_R1, α_R2).
    pub reconstruction: f64,
    /// Unweighted content magnitude.
    pub content: f64,
    /// Unweighted style magnitude.
    pub style: f64,
    /// Unweighted noise magnitude.
    pub noise: f64,
    /// Budget hinge value (unweighted).
    pub budget: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Recombines the terms with `w`; equals `total` for a breakdown produced with `w`.
    pub fn recompose(&self, w: &LossWeights, budget_weight: f64) -> f64 {
        self.reconstruction - w.alpha_c * self.content - w.alpha_s * self.style
            + w.alpha_n * self.noise
            + budget_weight * self.budget
    }

    pub fn is_finite(&self) -> bool {
        self.first_non_finite().is_none()
    }

    /// Name of the first non-finite term, in declaration order.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("reconstruction", self.reconstruction),
            ("content", self.content),
            ("style", self.style),
            ("noise", self.noise),
            ("budget", self.budget),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

/// Clipped Gaussian noise image `N` for `seed`.
pub fn noise_image(seed: u64, height: usize, width: usize) -> ImageTensor {
    use rand_distr::{Distribution, Normal};
    let dist = Normal::new(NOISE_MEAN, NOISE_STD).expect("valid noise model");
    let mut r = rng(seed, 0x9015e);
    let data = (0..height * width * 3).map(|_| dist.sample(&mut r) as f32).collect();
    ImageTensor::from_clamped(height, width, data).expect("noise image shape")
}

/// Graph-level term construction. All outputs are per-sample `[n, 1, 1, 1]`.
pub mod graph {
    use super::*;

    /// `α_R1·𝒫(I, I') + α_R2·mean((I − I')²)`.
    pub fn reconstruction<T: Real>(
        g: &mut Graph<T>,
        be: &BoundExtractor,
        i: Var,
        ip: Var,
        w: &LossWeights,
    ) -> Var {
        let fi = be.features(g, i);
        let fp = be.features(g, ip);
        reconstruction_from(g, be, i, ip, &fi, &fp, w)
    }

    pub(crate) fn reconstruction_from<T: Real>(
        g: &mut Graph<T>,
        be: &BoundExtractor,
        i: Var,
        ip: Var,
        fi: &[Var],
        fp: &[Var],
        w: &LossWeights,
    ) -> Var {
        let per = be.distance(g, fi, fp);
        let per = g.scale(per, w.alpha_r1);
        let mse = mse(g, i, ip);
        let mse = g.scale(mse, w.alpha_r2);
        g.add(per, mse)
    }

    /// Per-sample mean squared difference.
    pub fn mse<T: Real>(g: &mut Graph<T>, a: Var, b: Var) -> Var {
        let n = g.shape(a).per_sample();
        let d = g.sub(a, b);
        let sq = g.square(d);
        let s = g.sum_samples(sq);
        g.scale(s, 1.0 / n as f64)
    }

    /// `𝒫(I', M(I'))`.
    pub fn content<T: Real>(g: &mut Graph<T>, be: &BoundExtractor, ip: Var, m: Var) -> Var {
        let fp = be.features(g, ip);
        let fm = be.features(g, m);
        be.distance(g, &fp, &fm)
    }

    /// `gram_distance(I', M(I'))`.
    pub fn style<T: Real>(g: &mut Graph<T>, be: &BoundExtractor, ip: Var, m: Var) -> Var {
        let fp = be.features(g, ip);
        let fm = be.features(g, m);
        be.gram_distance(g, &fp, &fm)
    }

    /// `𝒫(M(I'), N)`.
    pub fn noise<T: Real>(g: &mut Graph<T>, be: &BoundExtractor, m: Var, n: Var) -> Var {
        let fm = be.features(g, m);
        let fnz = be.features(g, n);
        be.distance(g, &fm, &fnz)
    }

    /// `max(0, mean|I' − I| − (φ + ε))`.
    pub fn budget<T: Real>(g: &mut Graph<T>, i: Var, ip: Var, phi: f64, epsilon: f64) -> Var {
        let n = g.shape(i).per_sample();
        let d = g.sub(ip, i);
        let a = g.abs(d);
        let s = g.sum_samples(a);
        let mean = g.scale(s, 1.0 / n as f64);
        let over = g.add_scalar(mean, -(phi + epsilon));
        g.relu(over)
    }

    /// Per-sample term handles of the combined objective.
    #[derive(Debug, Clone, Copy)]
    pub struct Terms {
        pub reconstruction: Var,
        pub content: Var,
        pub style: Var,
        pub noise: Var,
        pub budget: Var,
        pub total: Var,
    }

    /// Builds every term and the per-sample total for `I`, `I'`, `M(I')` and `N`.
    #[allow(clippy::too_many_arguments)]
    pub fn total<T: Real>(
        g: &mut Graph<T>,
        be: &BoundExtractor,
        i: Var,
        ip: Var,
        m: Var,
        n: Var,
        w: &LossWeights,
        profile: &BalanceProfile,
    ) -> Terms {
        let fi = be.features(g, i);
        let fp = be.features(g, ip);
        let fm = be.features(g, m);
        let fnz = be.features(g, n);
        let reconstruction = reconstruction_from(g, be, i, ip, &fi, &fp, w);
        let content = be.distance(g, &fp, &fm);
        let style = be.gram_distance(g, &fp, &fm);
        let noise = be.distance(g, &fm, &fnz);
        let budget = budget(g, i, ip, profile.delta_budget, profile.epsilon);
        let c = g.scale(content, -w.alpha_c);
        let s = g.scale(style, -w.alpha_s);
        let nz = g.scale(noise, w.alpha_n);
        let b = g.scale(budget, profile.budget_weight);
        let mut total = g.add(reconstruction, c);
        total = g.add(total, s);
        total = g.add(total, nz);
        total = g.add(total, b);
        Terms {
            reconstruction,
            content,
            style,
            noise,
            budget,
            total,
        }
    }

    /// Batch-mean breakdown read off the tape.
    pub fn breakdown<T: Real>(g: &Graph<T>, t: &Terms) -> LossBreakdown {
        let mean = |v: Var| {
            let d = &g.value(v).data;
            d.iter().map(|x| x.as_f64()).sum::<f64>() / d.len() as f64
        };
        LossBreakdown {
            reconstruction: mean(t.reconstruction),
            content: mean(t.content),
            style: mean(t.style),
            noise: mean(t.noise),
            budget: mean(t.budget),
            total: mean(t.total),
        }
    }
}

fn pair_scalar(
    a: &ImageTensor,
    b: &ImageTensor,
    f: impl FnOnce(&mut Graph<f64>, &BoundExtractor, Var, Var) -> Var,
) -> Result<f64> {
    a.same_shape(b)?;
    let ext = Extractor::bundled();
    let mut g = Graph::<f64>::new();
    let be = ext.bind(&mut g);
    let va = g.constant(a.to_tensor());
    let vb = g.constant(b.to_tensor());
    let out = f(&mut g, &be, va, vb);
    Ok(g.value(out).item())
}

/// `L_R` for one pair, with the bundled extractor.
pub fn loss_reconstruction(i: &ImageTensor, ip: &ImageTensor, w: &LossWeights) -> Result<f64> {
    pair_scalar(i, ip, |g, be, a, b| graph::reconstruction(g, be, a, b, w))
}

pub fn loss_content(ip: &ImageTensor, m_out: &ImageTensor) -> Result<f64> {
    pair_scalar(ip, m_out, |g, be, a, b| graph::content(g, be, a, b))
}

pub fn loss_style(ip: &ImageTensor, m_out: &ImageTensor) -> Result<f64> {
    pair_scalar(ip, m_out, |g, be, a, b| graph::style(g, be, a, b))
}

/// `𝒫(M(I'), N)` with `N = noise_image(seed, ..)`.
pub fn loss_noise(m_out: &ImageTensor, seed: u64) -> Result<f64> {
    let n = noise_image(seed, m_out.height(), m_out.width());
    loss_noise_against(m_out, &n)
}

/// [`loss_noise`] against an explicit noise image.
pub fn loss_noise_against(m_out: &ImageTensor, noise: &ImageTensor) -> Result<f64> {
    pair_scalar(m_out, noise, |g, be, a, b| graph::noise(g, be, a, b))
}

/// Full breakdown for one `(I, I', M(I'))` triple, using `profile`'s budget.
pub fn loss_total(
    i: &ImageTensor,
    ip: &ImageTensor,
    m_out: &ImageTensor,
    w: &LossWeights,
    profile: &BalanceProfile,
    seed: u64,
) -> Result<LossBreakdown> {
    i.same_shape(ip)?;
    i.same_shape(m_out)?;
    w.validate()?;
    let n = noise_image(seed, i.height(), i.width());
    let ext = Extractor::bundled();
    let mut g = Graph::<f64>::new();
    let be = ext.bind(&mut g);
    let [vi, vp, vm, vn] = [i, ip, m_out, &n].map(|x| g.constant(x.to_tensor::<f64>()));
    let terms = graph::total(&mut g, &be, vi, vp, vm, vn, w, profile);
    Ok(graph::breakdown(&g, &terms))
}

/// `max(0, mean|I' − I| − (φ + ε))`.
pub fn delta_violation(i: &ImageTensor, ip: &ImageTensor, profile: &BalanceProfile) -> Result<f64> {
    i.same_shape(ip)?;
    Ok((i.mean_abs_diff(ip) - (profile.delta_budget + profile.epsilon)).max(0.0))
}

/// Batch tensor of noise images for per-sample seeds.
pub fn noise_batch<T: Real>(seeds: &[u64], height: usize, width: usize) -> Tensor<T> {
    Tensor::stack(
        &seeds
            .iter()
            .map(|&s| noise_image(s, height, width).to_tensor::<T>())
            .collect::<Vec<_>>(),
    )
}
