//! Protector training against the frozen oracle, loss curves and the balance bank.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autograd::Graph;
use crate::diffusion::{OracleConfig, OracleMode, OracleWeights};
use crate::error::{Error, Result};
use crate::eval::{self, EvalOptions, MetricReport};
use crate::imagecore::{scale_mask_to, Dataset, DatasetSplit, ImageTensor, MaskSpec};
use crate::nn::{rng, Adam};
use crate::objective::{self, graph, profile_for_level, BalanceProfile, LossBreakdown, LossWeights, LEVELS};
use crate::perceptual::Extractor;
use crate::plot::{self, Series};
use crate::protector::{Checkpoint, LossHistory, Protector, UNetSpec};
use crate::tensor::{Shape, Tensor};

/// Which terms of the objective are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    #[default]
    Full,
    /// `L − L_N`
    NoNoise,
    /// `L − L_N − L_R2`
    NoNoiseNoR2,
    /// `L − L_S`
    NoStyle,
}

impl LossVariant {
    pub const ALL: [LossVariant; 4] = [
        LossVariant::Full,
        LossVariant::NoNoise,
        LossVariant::NoNoiseNoR2,
        LossVariant::NoStyle,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            LossVariant::Full => "full",
            LossVariant::NoNoise => "no_noise",
            LossVariant::NoNoiseNoR2 => "no_noise_no_r2",
            LossVariant::NoStyle => "no_style",
        }
    }

    /// Masks the disabled weights to exactly zero.
    pub fn apply(&self, w: LossWeights) -> LossWeights {
        match self {
            LossVariant::Full => w,
            LossVariant::NoNoise => LossWeights { alpha_n: 0.0, ..w },
            LossVariant::NoNoiseNoR2 => LossWeights {
                alpha_n: 0.0,
                alpha_r2: 0.0,
                ..w
            },
            LossVariant::NoStyle => LossWeights { alpha_s: 0.0, ..w },
        }
    }
}

impl std::str::FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown loss variant `{s}` (full, no_noise, no_noise_no_r2, no_style)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub level: u32,
    pub oracle: OracleConfig,
    pub variant: LossVariant,
    pub spec: UNetSpec,
    /// Replaces the level's preset weights (before variant masking).
    pub weights: Option<LossWeights>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 5,
            batch_size: 8,
            seed: 0,
            level: 50,
            oracle: OracleConfig::default(),
            variant: LossVariant::Full,
            spec: UNetSpec::default(),
            weights: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        self.oracle.validate()?;
        self.spec.validate()?;
        if let Some(w) = &self.weights {
            w.validate()?;
        }
        profile_for_level(self.level).map(|_| ())
    }

    pub fn profile(&self) -> Result<BalanceProfile> {
        profile_for_level(self.level)
    }

    /// Weights actually optimized: preset (or override), then variant masking.
    pub fn effective_weights(&self) -> Result<LossWeights> {
        let base = match self.weights {
            Some(w) => w,
            None => self.profile()?.weights,
        };
        Ok(self.variant.apply(base))
    }

    /// Stable digest of the configuration, used as a cache key component.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean breakdown per epoch.
    pub epochs: Vec<LossBreakdown>,
    pub weights: LossWeights,
    pub budget_weight: f64,
    pub wall_time_secs: f64,
    pub steps: u64,
    pub checkpoint_path: Option<PathBuf>,
    pub oracle_hash: String,
    pub weight_hash: String,
}

impl TrainReport {
    pub fn history(&self) -> LossHistory {
        let col = |f: fn(&LossBreakdown) -> f64| self.epochs.iter().map(f).collect();
        LossHistory {
            reconstruction: col(|b| b.reconstruction),
            content: col(|b| b.content),
            style: col(|b| b.style),
            noise: col(|b| b.noise),
            budget: col(|b| b.budget),
            total: col(|b| b.total),
        }
    }
}

/// SplitMix64 finalizer; decorrelates derived seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Oracle noise seeds for step `step`, one per sample in the batch.
pub fn step_seeds(seed: u64, step: u64, n: usize) -> Vec<u64> {
    let base = mix_seed(seed, step);
    (0..n as u64).map(|k| mix_seed(base, k)).collect()
}

fn mask_for(config: &OracleConfig, res: usize) -> Result<Option<MaskSpec>> {
    Ok(match config.mode {
        OracleMode::Inpaint => Some(scale_mask_to(&MaskSpec::reference(), res, res)?),
        OracleMode::Reconstruct => None,
    })
}

/// `train`: optimizes a fresh protector on the split's training images.
pub fn train(
    split: &DatasetSplit,
    data: &Dataset,
    config: &TrainConfig,
    oracle: &OracleWeights,
) -> Result<(Checkpoint, TrainReport)> {
    config.validate()?;
    let images = data.select(&split.train)?;
    train_on_images(&images, config, oracle)
}

/// [`train`] on an explicit image list.
pub fn train_on_images(
    images: &[ImageTensor],
    config: &TrainConfig,
    oracle: &OracleWeights,
) -> Result<(Checkpoint, TrainReport)> {
    config.validate()?;
    if images.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let res = oracle.resolution();
    for img in images {
        if img.height() != res || img.width() != res {
            return Err(Error::Shape(format!(
                "training image {}x{} does not match oracle resolution {res}",
                img.height(),
                img.width()
            )));
        }
    }
    config.spec.check_input(res, res)?;
    let oracle_hash = oracle.hash().to_string();
    assert_eq!(oracle.recompute_hash(), oracle_hash, "oracle weights do not match their recorded hash");

    let profile = config.profile()?;
    let weights = config.effective_weights()?;
    let mask = mask_for(&config.oracle, res)?;
    let ext = Extractor::bundled();
    let mut protector = Protector::build(config.spec, config.seed)?;
    let mut opt = Adam::new(protector.params(), config.learning_rate);
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut shuffle = rng(config.seed, 0x7a1);
    let started = Instant::now();
    let mut epochs = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle);
        let mut sum = LossBreakdown::default();
        let mut seen = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let step = opt.steps();
            let n = chunk.len();
            let x = Tensor::stack(&chunk.iter().map(|&i| images[i].to_tensor::<f32>()).collect::<Vec<_>>());
            let seeds = step_seeds(config.seed, step, n);
            let noise_seeds: Vec<u64> = seeds.iter().map(|&s| mix_seed(s, 0x401)).collect();

            let mut g = Graph::<f32>::new();
            let p = protector.params().bind(&mut g, true);
            let be = ext.bind(&mut g);
            let bo = oracle.bind(&mut g);
            let vi = g.constant(x.clone());
            let vp = protector.forward(&mut g, &p, &x);
            let vm = bo.sample(&mut g, vp, &config.oracle, &seeds, mask.as_ref());
            let vn = g.constant(objective::noise_batch(&noise_seeds, res, res));
            let terms = graph::total(&mut g, &be, vi, vp, vm, vn, &weights, &profile);
            let loss = g.mean_all(terms.total);
            let b = graph::breakdown(&g, &terms);
            if let Some(term) = b.first_non_finite() {
                return Err(Error::NonFinite {
                    term: term.into(),
                    step,
                });
            }
            let mut grads = g.backward(loss);
            let grads = p.grads(protector.params(), &mut grads);
            if grads.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    term: "gradient".into(),
                    step,
                });
            }
            opt.step(protector.params_mut(), &grads);
            accumulate(&mut sum, &b, n as f64);
            seen += n;
        }
        let mean = scale(&sum, 1.0 / seen as f64);
        tracing::info!(
            epoch,
            total = mean.total,
            reconstruction = mean.reconstruction,
            content = mean.content,
            style = mean.style,
            noise = mean.noise,
            budget = mean.budget,
            "protector epoch"
        );
        epochs.push(mean);
    }

    if oracle.recompute_hash() != oracle_hash {
        panic!("oracle weights changed during protector training");
    }
    let report = TrainReport {
        epochs,
        weights,
        budget_weight: profile.budget_weight,
        wall_time_secs: started.elapsed().as_secs_f64(),
        steps: opt.steps(),
        checkpoint_path: None,
        oracle_hash: oracle_hash.clone(),
        weight_hash: protector.weight_hash(),
    };
    let checkpoint = Checkpoint {
        protector,
        level: config.level,
        oracle_hash,
        epoch: config.epochs,
        config: serde_json::to_value(config)?,
        history: report.history(),
    };
    Ok((checkpoint, report))
}

fn accumulate(acc: &mut LossBreakdown, b: &LossBreakdown, w: f64) {
    acc.reconstruction += w * b.reconstruction;
    acc.content += w * b.content;
    acc.style += w * b.style;
    acc.noise += w * b.noise;
    acc.budget += w * b.budget;
    acc.total += w * b.total;
}

fn scale(b: &LossBreakdown, s: f64) -> LossBreakdown {
    let mut out = LossBreakdown::default();
    accumulate(&mut out, b, s);
    out
}

/// On-disk memo of training runs keyed by `(config, images, oracle)`.
#[derive(Debug, Clone)]
pub struct TrainCache {
    dir: PathBuf,
}

impl TrainCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn key(images: &[ImageTensor], config: &TrainConfig, oracle: &OracleWeights) -> String {
        let mut h = Sha256::new();
        h.update(config.digest());
        h.update(crate::diffusion::corpus_fingerprint(images));
        h.update(oracle.hash());
        hex::encode(h.finalize())[..24].to_string()
    }

    /// Returns a cached run or trains and stores one.
    pub fn train(
        &self,
        images: &[ImageTensor],
        config: &TrainConfig,
        oracle: &OracleWeights,
    ) -> Result<(Checkpoint, TrainReport)> {
        let key = Self::key(images, config, oracle);
        let ckpt_path = self.dir.join(format!("{key}.mamc"));
        let report_path = self.dir.join(format!("{key}.json"));
        if ckpt_path.exists() && report_path.exists() {
            let text = std::fs::read_to_string(&report_path).map_err(|e| Error::io(&report_path, e))?;
            let report: TrainReport = serde_json::from_str(&text)?;
            let (ckpt, _) = Checkpoint::load(&ckpt_path, Some(oracle.hash()))?;
            if ckpt.protector.weight_hash() == report.weight_hash {
                tracing::info!(key, "reusing cached training run");
                return Ok((ckpt, report));
            }
        }
        let (ckpt, mut report) = train_on_images(images, config, oracle)?;
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        ckpt.save(&ckpt_path)?;
        report.checkpoint_path = Some(ckpt_path);
        std::fs::write(&report_path, serde_json::to_vec_pretty(&report)?).map_err(|e| Error::io(&report_path, e))?;
        Ok((ckpt, report))
    }
}

/// Trains through `cache` when present.
pub fn train_maybe_cached(
    cache: Option<&TrainCache>,
    images: &[ImageTensor],
    config: &TrainConfig,
    oracle: &OracleWeights,
) -> Result<(Checkpoint, TrainReport)> {
    match cache {
        Some(c) => c.train(images, config, oracle),
        None => train_on_images(images, config, oracle),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum BankEntry {
    Available {
        level: u32,
        checkpoint: PathBuf,
        weight_hash: String,
        p1: MetricReport,
        p2: MetricReport,
    },
    Unavailable {
        level: u32,
        reason: String,
    },
}

impl BankEntry {
    pub fn level(&self) -> u32 {
        match self {
            BankEntry::Available { level, .. } | BankEntry::Unavailable { level, .. } => *level,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankManifest {
    pub oracle_hash: String,
    pub entries: Vec<BankEntry>,
}

pub const MANIFEST_FILE: &str = "bank.json";

impl BankManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn available(&self) -> impl Iterator<Item = &BankEntry> {
        self.entries.iter().filter(|e| matches!(e, BankEntry::Available { .. }))
    }
}

/// `train_balance_bank`: one checkpoint per preset level, written under `out_dir`
/// with a `bank.json` manifest. A failing level is recorded as unavailable.
pub fn train_balance_bank(
    split: &DatasetSplit,
    data: &Dataset,
    base: &TrainConfig,
    oracle: &OracleWeights,
    out_dir: impl AsRef<Path>,
) -> Result<BankManifest> {
    let out_dir = out_dir.as_ref();
    let profiles: Vec<BalanceProfile> = LEVELS.iter().map(|&l| profile_for_level(l)).collect::<Result<_>>()?;
    let train_images = data.select(&split.train)?;
    let test_images = data.select(&split.test)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut entries = Vec::new();
    for p in profiles {
        let config = TrainConfig {
            level: p.level,
            ..*base
        };
        let outcome = (|| -> Result<BankEntry> {
            let (ckpt, _) = train_on_images(&train_images, &config, oracle)?;
            let name = format!("level_{:02}.mamc", p.level);
            ckpt.save(out_dir.join(&name))?;
            let (p1, p2) = eval::eval_protocols(&test_images, &ckpt, oracle, &EvalOptions::for_config(&config.oracle))?;
            Ok(BankEntry::Available {
                level: p.level,
                checkpoint: PathBuf::from(name),
                weight_hash: ckpt.protector.weight_hash(),
                p1,
                p2,
            })
        })();
        entries.push(outcome.unwrap_or_else(|e| {
            tracing::warn!(level = p.level, error = %e, "bank level failed");
            BankEntry::Unavailable {
                level: p.level,
                reason: e.to_string(),
            }
        }));
    }
    let manifest = BankManifest {
        oracle_hash: oracle.hash().to_string(),
        entries,
    };
    manifest.save(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Signed per-term contributions to the total, one value per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCurves {
    pub reconstruction: Vec<f64>,
    pub content: Vec<f64>,
    pub style: Vec<f64>,
    pub noise: Vec<f64>,
    pub budget: Vec<f64>,
    pub total: Vec<f64>,
}

impl LossCurves {
    pub fn from_report(r: &TrainReport) -> Self {
        let w = &r.weights;
        let col = |f: &dyn Fn(&LossBreakdown) -> f64| r.epochs.iter().map(f).collect::<Vec<f64>>();
        Self {
            reconstruction: col(&|b| b.reconstruction),
            content: col(&|b| -w.alpha_c * b.content),
            style: col(&|b| -w.alpha_s * b.style),
            noise: col(&|b| w.alpha_n * b.noise),
            budget: col(&|b| r.budget_weight * b.budget),
            total: col(&|b| b.total),
        }
    }
}

pub const CURVE_SIZE: (u32, u32) = (800, 400);

/// `emit_loss_curves`: writes `<stem>.json` and an 800×400 `<stem>.png`.
pub fn emit_loss_curves(report: &TrainReport, stem: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
    let stem = stem.as_ref();
    let curves = LossCurves::from_report(report);
    let json_path = stem.with_extension("json");
    let png_path = stem.with_extension("png");
    if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(&json_path, serde_json::to_vec_pretty(&curves)?).map_err(|e| Error::io(&json_path, e))?;
    let series = vec![
        Series::new("reconstruction", curves.reconstruction.clone()),
        Series::new("content", curves.content.clone()),
        Series::new("style", curves.style.clone()),
        Series::new("noise", curves.noise.clone()),
        Series::new("total", curves.total.clone()),
    ];
    let img = plot::line_chart(&series, CURVE_SIZE.0, CURVE_SIZE.1);
    img.save(&png_path).map_err(|e| Error::Format(format!("{}: {e}", png_path.display())))?;
    Ok((json_path, png_path))
}

/// Shape of one training batch.
pub fn batch_shape(n: usize, res: usize) -> Shape {
    Shape::new(n, 3, res, res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::default_denoiser_spec;
    use crate::imagecore::synth;

    fn tiny() -> (Vec<ImageTensor>, OracleWeights, TrainConfig) {
        let images = synth::corpus(6, 16, 1).images;
        let oracle = OracleWeights::init(
            UNetSpec {
                base_channels: 4,
                ..default_denoiser_spec()
            },
            16,
            2,
        )
        .unwrap();
        let config = TrainConfig {
            epochs: 2,
            batch_size: 4,
            spec: UNetSpec {
                depth: 2,
                base_channels: 4,
                ..UNetSpec::default()
            },
            oracle: OracleConfig {
                steps: 4,
                ..OracleConfig::default()
            },
            ..TrainConfig::default()
        };
        (images, oracle, config)
    }

    #[test]
    fn variants_mask_exactly() {
        let w = LossWeights::default();
        assert_eq!(LossVariant::NoNoise.apply(w).alpha_n, 0.0);
        let v = LossVariant::NoNoiseNoR2.apply(w);
        assert_eq!((v.alpha_n, v.alpha_r2, v.alpha_r1), (0.0, 0.0, 1.0));
        assert_eq!(LossVariant::NoStyle.apply(w).alpha_s, 0.0);
        assert_eq!("no_style".parse::<LossVariant>().unwrap(), LossVariant::NoStyle);
        assert!("nope".parse::<LossVariant>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { level: 17, ..Default::default() }.validate().is_err());
        let d = TrainConfig::default();
        assert_eq!((d.learning_rate, d.epochs, d.batch_size, d.oracle.strength), (1e-3, 5, 8, 5));
    }

    #[test]
    fn step_seeds_differ_per_step_and_sample() {
        let a = step_seeds(1, 0, 3);
        let b = step_seeds(1, 1, 3);
        assert_ne!(a, b);
        assert_ne!(a[0], a[1]);
        assert_eq!(a, step_seeds(1, 0, 3));
    }

    #[test]
    fn training_is_deterministic_and_leaves_the_oracle_alone() {
        let (images, oracle, config) = tiny();
        let before = oracle.recompute_hash();
        let (c1, r1) = train_on_images(&images, &config, &oracle).unwrap();
        let (c2, r2) = train_on_images(&images, &config, &oracle).unwrap();
        assert_eq!(oracle.recompute_hash(), before);
        assert_eq!(c1.protector.weight_hash(), c2.protector.weight_hash());
        assert_eq!(r1.epochs, r2.epochs);
        assert_eq!(r1.epochs.len(), 2);
        assert_eq!(c1.oracle_hash, before);
        assert_ne!(c1.protector.weight_hash(), Protector::build(config.spec, config.seed).unwrap().weight_hash());
        for b in &r1.epochs {
            assert!((b.total - b.recompose(&r1.weights, r1.budget_weight)).abs() < 1e-4);
        }
    }

    #[test]
    fn no_style_contributes_nothing() {
        let (images, oracle, mut config) = tiny();
        config.variant = LossVariant::NoStyle;
        config.epochs = 1;
        let (_, r) = train_on_images(&images, &config, &oracle).unwrap();
        let curves = LossCurves::from_report(&r);
        assert!(curves.style.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn inpaint_training_runs() {
        let (images, oracle, mut config) = tiny();
        config.oracle.mode = OracleMode::Inpaint;
        config.epochs = 1;
        let (c, _) = train_on_images(&images, &config, &oracle).unwrap();
        assert_eq!(c.config["oracle"]["mode"], "inpaint");
    }

    #[test]
    fn resolution_mismatch_is_rejected() {
        let (_, oracle, config) = tiny();
        let images = synth::corpus(2, 32, 0).images;
        assert!(matches!(train_on_images(&images, &config, &oracle), Err(Error::Shape(_))));
    }

    #[test]
    fn cache_reuses_runs() {
        let (images, oracle, mut config) = tiny();
        config.epochs = 1;
        let dir = tempfile::tempdir().unwrap();
        let cache = TrainCache::new(dir.path());
        let (a, _) = cache.train(&images, &config, &oracle).unwrap();
        let (b, rb) = cache.train(&images, &config, &oracle).unwrap();
        assert_eq!(a.protector.weight_hash(), b.protector.weight_hash());
        assert!(rb.checkpoint_path.is_some());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 2);
    }

    #[test]
    fn loss_curves_have_one_point_per_epoch() {
        let (images, oracle, config) = tiny();
        let (_, r) = train_on_images(&images, &config, &oracle).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (json, png) = emit_loss_curves(&r, dir.path().join("curves")).unwrap();
        let curves: LossCurves = serde_json::from_slice(&std::fs::read(json).unwrap()).unwrap();
        assert_eq!(curves.total.len(), 2);
        for e in 0..2 {
            let sum = curves.reconstruction[e] + curves.content[e] + curves.style[e] + curves.noise[e] + curves.budget[e];
            assert!((sum - curves.total[e]).abs() < 1e-4);
        }
        let img = image::open(png).unwrap();
        assert_eq!((img.width(), img.height()), CURVE_SIZE);
    }
}
