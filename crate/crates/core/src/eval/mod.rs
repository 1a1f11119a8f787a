//! Evaluation protocols, sweeps and reports.
//!
//! P1 compares each input with its protected twin; P2 compares the oracle's
//! outputs for the two, using the same noise seed for both members of a pair.

pub mod metrics;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::{OracleConfig, OracleMode, OracleWeights};
use crate::error::{Error, Result};
use crate::imagecore::{scale_mask_to, ImageTensor, MaskSpec};
use crate::perceptual::Extractor;
use crate::plot::{self, Series};
use crate::protector::{Checkpoint, Protector};
use crate::training::{self, LossVariant, TrainCache, TrainConfig};

pub use metrics::{fid, gaussian_blur, jpeg_roundtrip, psnr, rmse, ssim, Fid};

pub const EMBEDDER: &str = "perceptual-extractor/pool3-64d";
pub const DEFAULT_BLUR_KERNELS: [usize; 3] = [3, 7, 11];
pub const DEFAULT_JPEG_QUALITIES: [u8; 3] = [75, 30, 5];
pub const DEFAULT_STRENGTHS: [u8; 3] = [4, 5, 7];
pub const DEFAULT_ALPHA_R2: [f64; 3] = [0.75, 1.0, 1.5];
/// Strength used by inpainting scenarios (the whole masked area is regenerated).
pub const INPAINT_STRENGTH: u8 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Protocol {
    P1,
    P2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub protocol: Protocol,
    pub psnr: f64,
    pub rmse: f64,
    pub ssim: f64,
    /// `None` for fewer than two samples.
    pub fid: Option<f64>,
    pub fid_jitter: bool,
    /// Mean perceptual distance between the compared images.
    pub perceptual: f64,
    pub samples: usize,
    pub embedder: String,
}

impl MetricReport {
    /// Averages metrics over aligned pairs; FID over the two sets.
    pub fn compute(protocol: Protocol, a: &[ImageTensor], b: &[ImageTensor]) -> Result<Self> {
        if a.len() != b.len() || a.is_empty() {
            return Err(Error::Config(format!("metric sets must be aligned and non-empty ({} vs {})", a.len(), b.len())));
        }
        let ext = Extractor::bundled();
        let n = a.len() as f64;
        let (mut p, mut r, mut s, mut d) = (0.0, 0.0, 0.0, 0.0);
        for (x, y) in a.iter().zip(b) {
            p += psnr(x, y)?;
            r += rmse(x, y)?;
            s += ssim(x, y)?;
            d += ext.perceptual_distance(x, y)?;
        }
        let f = if a.len() >= 2 { Some(fid(a, b, ext)?) } else { None };
        Ok(Self {
            protocol,
            psnr: p / n,
            rmse: r / n,
            ssim: s / n,
            fid: f.map(|f| f.value),
            fid_jitter: f.is_some_and(|f| f.jittered),
            perceptual: d / n,
            samples: a.len(),
            embedder: EMBEDDER.into(),
        })
    }

    pub fn is_valid(&self) -> bool {
        self.psnr.is_finite()
            && self.rmse.is_finite()
            && (-1.0..=1.0).contains(&self.ssim)
            && self.fid.map_or(true, |f| f.is_finite() && f >= 0.0)
            && self.perceptual.is_finite()
    }
}

/// Post-processing applied to `I` and `I'` before the oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "param")]
pub enum Postprocess {
    None,
    Blur(usize),
    Jpeg(u8),
}

impl Postprocess {
    pub fn apply(&self, img: &ImageTensor) -> Result<ImageTensor> {
        match *self {
            Postprocess::None => Ok(img.clone()),
            Postprocess::Blur(k) => gaussian_blur(img, k),
            Postprocess::Jpeg(q) => jpeg_roundtrip(img, q),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Postprocess::None => "none".into(),
            Postprocess::Blur(k) => format!("blur_{k}"),
            Postprocess::Jpeg(q) => format!("jpeg_{q}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub oracle: OracleConfig,
    /// Evaluate even when the checkpoint was trained against another oracle.
    pub force: bool,
    pub batch_size: usize,
    pub postprocess: Postprocess,
    /// Inpainting mask; derived from the reference mask when `None`.
    pub mask: Option<MaskSpec>,
}

impl EvalOptions {
    pub fn for_config(oracle: &OracleConfig) -> Self {
        Self {
            oracle: *oracle,
            force: false,
            batch_size: 16,
            postprocess: Postprocess::None,
            mask: None,
        }
    }
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self::for_config(&OracleConfig::default())
    }
}

/// The four images of every evaluated sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolRun {
    pub inputs: Vec<ImageTensor>,
    pub protected: Vec<ImageTensor>,
    pub diffused_inputs: Vec<ImageTensor>,
    pub diffused_protected: Vec<ImageTensor>,
    pub mask: Option<MaskSpec>,
}

impl ProtocolRun {
    pub fn reports(&self) -> Result<(MetricReport, MetricReport)> {
        Ok((
            MetricReport::compute(Protocol::P1, &self.inputs, &self.protected)?,
            MetricReport::compute(Protocol::P2, &self.diffused_inputs, &self.diffused_protected)?,
        ))
    }

    /// Largest change outside the mask between an oracle input and its output.
    pub fn unmasked_max_diff(&self) -> Option<f32> {
        let m = self.mask?;
        let mut worst = 0.0f32;
        for (src, out) in self.inputs.iter().zip(&self.diffused_inputs).chain(self.protected.iter().zip(&self.diffused_protected)) {
            let (h, w, c) = src.dims();
            for y in 0..h {
                for x in 0..w {
                    if m.contains(y, x) {
                        continue;
                    }
                    for ch in 0..c {
                        worst = worst.max((src.get(y, x, ch) - out.get(y, x, ch)).abs());
                    }
                }
            }
        }
        Some(worst)
    }

    /// One row per sample: input, protected, M(input), M(protected).
    pub fn export_gallery(&self, path: impl AsRef<Path>, max_rows: usize) -> Result<()> {
        let path = path.as_ref();
        let rows: Vec<Vec<ImageTensor>> = (0..self.inputs.len().min(max_rows))
            .map(|i| {
                vec![
                    self.inputs[i].clone(),
                    self.protected[i].clone(),
                    self.diffused_inputs[i].clone(),
                    self.diffused_protected[i].clone(),
                ]
            })
            .collect();
        let grid = plot::image_grid(&rows).ok_or_else(|| Error::Config("gallery needs at least one sample".into()))?;
        grid.save(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

/// Paired oracle seeds: sample `i` uses `base + i` for both `I` and `I'`.
pub fn pair_seeds(base: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| base.wrapping_add(i)).collect()
}

fn run_oracle(
    oracle: &OracleWeights,
    images: &[ImageTensor],
    config: &OracleConfig,
    mask: Option<&MaskSpec>,
    batch: usize,
) -> Result<Vec<ImageTensor>> {
    let seeds = pair_seeds(config.seed, images.len());
    let mut out = Vec::with_capacity(images.len());
    for (imgs, s) in images.chunks(batch.max(1)).zip(seeds.chunks(batch.max(1))) {
        out.extend(oracle.apply_batch(imgs, config, s, mask)?);
    }
    Ok(out)
}

/// Runs protector and oracle over `images` and keeps every intermediate.
pub fn run_protocols(
    images: &[ImageTensor],
    protector: &Protector,
    oracle: &OracleWeights,
    opts: &EvalOptions,
) -> Result<ProtocolRun> {
    let protected = protector.protect_all(images, opts.batch_size)?;
    let mask = match opts.oracle.mode {
        OracleMode::Inpaint => Some(match opts.mask {
            Some(m) => m,
            None => scale_mask_to(&MaskSpec::reference(), oracle.resolution(), oracle.resolution())?,
        }),
        OracleMode::Reconstruct => None,
    };
    let pre_in = images.iter().map(|i| opts.postprocess.apply(i)).collect::<Result<Vec<_>>>()?;
    let pre_prot = protected.iter().map(|i| opts.postprocess.apply(i)).collect::<Result<Vec<_>>>()?;
    let diffused_inputs = run_oracle(oracle, &pre_in, &opts.oracle, mask.as_ref(), opts.batch_size)?;
    let diffused_protected = run_oracle(oracle, &pre_prot, &opts.oracle, mask.as_ref(), opts.batch_size)?;
    let (inputs, protected) = match opts.postprocess {
        Postprocess::None => (images.to_vec(), protected),
        _ => (pre_in, pre_prot),
    };
    Ok(ProtocolRun {
        inputs,
        protected,
        diffused_inputs,
        diffused_protected,
        mask,
    })
}

fn check_oracle(ckpt: &Checkpoint, oracle: &OracleWeights, force: bool) -> Result<()> {
    if ckpt.oracle_hash != oracle.hash() && !force {
        return Err(Error::integrity(
            "oracle_hash",
            format!(
                "checkpoint was trained against oracle {}, not {} (use --force to evaluate anyway)",
                ckpt.oracle_hash,
                oracle.hash()
            ),
        ));
    }
    Ok(())
}

/// `eval_protocols`: P1 and P2 over `images`.
pub fn eval_protocols(
    images: &[ImageTensor],
    ckpt: &Checkpoint,
    oracle: &OracleWeights,
    opts: &EvalOptions,
) -> Result<(MetricReport, MetricReport)> {
    check_oracle(ckpt, oracle, opts.force)?;
    run_protocols(images, &ckpt.protector, oracle, opts)?.reports()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub setting: String,
    pub p1: Option<MetricReport>,
    pub p2: Option<MetricReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unmasked_max_diff: Option<f32>,
}

impl SweepPoint {
    fn ok(setting: impl Into<String>, p1: Option<MetricReport>, p2: Option<MetricReport>) -> Self {
        Self {
            setting: setting.into(),
            p1,
            p2,
            error: None,
            unmasked_max_diff: None,
        }
    }

    fn failed(setting: impl Into<String>, e: &Error) -> Self {
        Self {
            setting: setting.into(),
            p1: None,
            p2: None,
            error: Some(e.to_string()),
            unmasked_max_diff: None,
        }
    }
}

/// PSNR/30, RMSE/10 and log10 FID for one protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalized {
    pub psnr: f64,
    pub rmse: f64,
    pub ssim: f64,
    pub log10_fid: Option<f64>,
}

impl Normalized {
    pub fn of(m: &MetricReport) -> Self {
        Self {
            psnr: m.psnr / 30.0,
            rmse: m.rmse / 10.0,
            ssim: m.ssim,
            log10_fid: m.fid.map(|f| f.max(1e-12).log10()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedPoint {
    pub setting: String,
    pub p1: Option<Normalized>,
    pub p2: Option<Normalized>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub axis: String,
    pub embedder: String,
    pub points: Vec<SweepPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalized: Option<Vec<NormalizedPoint>>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl SweepReport {
    fn new(axis: &str, points: Vec<SweepPoint>) -> Self {
        Self {
            axis: axis.into(),
            embedder: EMBEDDER.into(),
            points,
            normalized: None,
            notes: Vec::new(),
        }
    }

    pub fn point(&self, setting: &str) -> Option<&SweepPoint> {
        self.points.iter().find(|p| p.setting == setting)
    }

    pub fn with_normalized(mut self) -> Self {
        self.normalized = Some(
            self.points
                .iter()
                .map(|p| NormalizedPoint {
                    setting: p.setting.clone(),
                    p1: p.p1.as_ref().map(Normalized::of),
                    p2: p.p2.as_ref().map(Normalized::of),
                })
                .collect(),
        );
        self
    }

    /// At least two points, unique settings and valid metrics.
    pub fn validate(&self) -> Result<()> {
        if self.points.len() < 2 {
            return Err(Error::Config(format!("sweep `{}` has fewer than 2 points", self.axis)));
        }
        let mut seen = std::collections::HashSet::new();
        for p in &self.points {
            if !seen.insert(&p.setting) {
                return Err(Error::Config(format!("duplicate sweep setting `{}`", p.setting)));
            }
            for m in p.p1.iter().chain(p.p2.iter()) {
                if !m.is_valid() {
                    return Err(Error::Config(format!("invalid metrics at `{}`", p.setting)));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Plain-text table.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{}\n{:<22} {:>9} {:>9} {:>7} {:>9} | {:>9} {:>9} {:>7} {:>9} {:>8}\n",
            self.axis, "setting", "P1 PSNR", "P1 RMSE", "P1 SSIM", "P1 FID", "P2 PSNR", "P2 RMSE", "P2 SSIM", "P2 FID", "P2 div"
        );
        let cols = |m: &Option<MetricReport>| match m {
            Some(m) => format!(
                "{:>9.3} {:>9.3} {:>7.4} {:>9}",
                m.psnr,
                m.rmse,
                m.ssim,
                m.fid.map_or("-".into(), |f| format!("{f:.4}"))
            ),
            None => format!("{:>9} {:>9} {:>7} {:>9}", "-", "-", "-", "-"),
        };
        for p in &self.points {
            let div = p.p2.as_ref().map_or("-".into(), |m| format!("{:.4}", m.perceptual));
            out += &format!("{:<22} {} | {} {:>8}", p.setting, cols(&p.p1), cols(&p.p2), div);
            if let Some(e) = &p.error {
                out += &format!("  error: {e}");
            }
            out.push('\n');
        }
        for n in &self.notes {
            out += &format!("note: {n}\n");
        }
        out
    }

    /// Writes `<stem>.json`, `<stem>.txt` and a `<stem>.png` chart.
    pub fn write(&self, stem: impl AsRef<Path>) -> Result<()> {
        let stem = stem.as_ref();
        if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let json = stem.with_extension("json");
        std::fs::write(&json, self.to_json()?).map_err(|e| Error::io(&json, e))?;
        let txt = stem.with_extension("txt");
        std::fs::write(&txt, self.to_table()).map_err(|e| Error::io(&txt, e))?;
        let col = |f: &dyn Fn(&SweepPoint) -> Option<f64>| self.points.iter().map(|p| f(p).unwrap_or(f64::NAN)).collect();
        let series = vec![
            Series::new("p1_psnr/30", col(&|p| p.p1.as_ref().map(|m| m.psnr / 30.0))),
            Series::new("p1_ssim", col(&|p| p.p1.as_ref().map(|m| m.ssim))),
            Series::new("p2_psnr/30", col(&|p| p.p2.as_ref().map(|m| m.psnr / 30.0))),
            Series::new("p2_ssim", col(&|p| p.p2.as_ref().map(|m| m.ssim))),
            Series::new("p2_divergence", col(&|p| p.p2.as_ref().map(|m| m.perceptual))),
        ];
        let png = stem.with_extension("png");
        plot::line_chart(&series, 800, 400)
            .save(&png)
            .map_err(|e| Error::Format(format!("{}: {e}", png.display())))
    }
}

/// `robustness_sweep`: P2 under blur and JPEG applied to both `I` and `I'`.
pub fn robustness_sweep(
    images: &[ImageTensor],
    ckpt: &Checkpoint,
    oracle: &OracleWeights,
    opts: &EvalOptions,
    kernels: &[usize],
    qualities: &[u8],
) -> Result<SweepReport> {
    if let Some(k) = kernels.iter().find(|&&k| k % 2 == 0 || k == 0) {
        return Err(Error::Config(format!("blur kernel {k} must be odd")));
    }
    if let Some(q) = qualities.iter().find(|&&q| !(1..=100).contains(&q)) {
        return Err(Error::Config(format!("JPEG quality {q} outside [1, 100]")));
    }
    check_oracle(ckpt, oracle, opts.force)?;
    let settings: Vec<Postprocess> = std::iter::once(Postprocess::None)
        .chain(kernels.iter().map(|&k| Postprocess::Blur(k)))
        .chain(qualities.iter().map(|&q| Postprocess::Jpeg(q)))
        .collect();
    let mut points = Vec::new();
    for post in settings {
        let o = EvalOptions {
            postprocess: post,
            ..opts.clone()
        };
        let label = post.label();
        points.push(match run_protocols(images, &ckpt.protector, oracle, &o).and_then(|r| r.reports()) {
            Ok((p1, p2)) => SweepPoint::ok(label, Some(p1), Some(p2)),
            Err(e) => SweepPoint::failed(label, &e),
        });
    }
    let mut report = SweepReport::new("postprocess", points);
    let base = report.point("none").and_then(|p| p.p2.as_ref()).map(|m| m.perceptual);
    if let Some(base) = base {
        for p in &report.points {
            if let (Some(m), true) = (&p.p2, p.setting != "none") {
                let dir = if m.perceptual >= base { "preserves or strengthens" } else { "weakens" };
                report.notes.push(format!(
                    "{}: P2 divergence {:.4} vs {:.4} unprocessed ({dir} protection)",
                    p.setting, m.perceptual, base
                ));
            }
        }
    }
    Ok(report)
}

/// `strength_sweep`: a P1 reference row followed by P2 at each strength.
pub fn strength_sweep(
    images: &[ImageTensor],
    ckpt: &Checkpoint,
    oracle: &OracleWeights,
    opts: &EvalOptions,
    strengths: &[u8],
) -> Result<SweepReport> {
    for &s in strengths {
        opts.oracle.with_strength(s).validate()?;
    }
    check_oracle(ckpt, oracle, opts.force)?;
    let protected = ckpt.protector.protect_all(images, opts.batch_size)?;
    let mut points = vec![SweepPoint::ok(
        "reference",
        Some(MetricReport::compute(Protocol::P1, images, &protected)?),
        None,
    )];
    for &s in strengths {
        let cfg = opts.oracle.with_strength(s);
        let label = format!("strength_{s}");
        let res = (|| {
            let a = run_oracle(oracle, images, &cfg, None, opts.batch_size)?;
            let b = run_oracle(oracle, &protected, &cfg, None, opts.batch_size)?;
            MetricReport::compute(Protocol::P2, &a, &b)
        })();
        points.push(match res {
            Ok(p2) => SweepPoint::ok(label, None, Some(p2)),
            Err(e) => SweepPoint::failed(label, &e),
        });
    }
    Ok(SweepReport::new("strength", points))
}

/// Trains one configuration and evaluates it; failures become error points.
fn train_and_eval(
    label: String,
    train: &[ImageTensor],
    test: &[ImageTensor],
    config: &TrainConfig,
    oracle: &OracleWeights,
    cache: Option<&TrainCache>,
) -> SweepPoint {
    let res = training::train_maybe_cached(cache, train, config, oracle)
        .and_then(|(ckpt, _)| eval_protocols(test, &ckpt, oracle, &EvalOptions::for_config(&config.oracle)));
    match res {
        Ok((p1, p2)) => SweepPoint::ok(label, Some(p1), Some(p2)),
        Err(e) => SweepPoint::failed(label, &e),
    }
}

/// `ablation_suite`: the four loss variants, normalized for plotting.
pub fn ablation_suite(
    train: &[ImageTensor],
    test: &[ImageTensor],
    base: &TrainConfig,
    oracle: &OracleWeights,
    cache: Option<&TrainCache>,
) -> Result<SweepReport> {
    base.validate()?;
    let points = LossVariant::ALL
        .iter()
        .map(|&v| {
            let c = TrainConfig { variant: v, ..*base };
            train_and_eval(v.name().into(), train, test, &c, oracle, cache)
        })
        .collect();
    Ok(SweepReport::new("loss_variant", points).with_normalized())
}

pub fn alpha_r2_label(v: f64) -> String {
    format!("alpha_r2_{v}")
}

/// `weight_sweep`: one training run per `α_R2`, other weights from the base level.
pub fn weight_sweep(
    train: &[ImageTensor],
    test: &[ImageTensor],
    base: &TrainConfig,
    oracle: &OracleWeights,
    values: &[f64],
    cache: Option<&TrainCache>,
) -> Result<SweepReport> {
    if let Some(v) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::Config(format!("alpha_r2 value {v} must be positive")));
    }
    base.validate()?;
    let mut w = base.effective_weights()?;
    let points = values
        .iter()
        .map(|&v| {
            w.alpha_r2 = v;
            let c = TrainConfig {
                weights: Some(w),
                variant: LossVariant::Full,
                ..*base
            };
            train_and_eval(alpha_r2_label(v), train, test, &c, oracle, cache)
        })
        .collect();
    Ok(SweepReport::new("alpha_r2", points))
}

/// `inpaint_scenarios`:
/// 1. reconstruction-trained protector, evaluated with the inpainting oracle;
/// 2. inpainting-trained protector, evaluated with the inpainting oracle;
/// 3. inpainting-trained protector, evaluated with the reconstruction oracle.
///
/// Galleries (`scenario_<k>.png`) go to `gallery_dir` when given.
pub fn inpaint_scenarios(
    images: &[ImageTensor],
    reconstruct_ckpt: Option<&Checkpoint>,
    inpaint_ckpt: Option<&Checkpoint>,
    oracle: &OracleWeights,
    opts: &EvalOptions,
    gallery_dir: Option<&Path>,
) -> Result<SweepReport> {
    let inpaint = OracleConfig {
        mode: OracleMode::Inpaint,
        strength: INPAINT_STRENGTH,
        ..opts.oracle
    };
    let reconstruct = OracleConfig {
        mode: OracleMode::Reconstruct,
        ..opts.oracle
    };
    let scenarios = [
        ("1_pretrained_on_inpaint", reconstruct_ckpt, inpaint),
        ("2_inpaint_trained_on_inpaint", inpaint_ckpt, inpaint),
        ("3_inpaint_trained_on_reconstruct", inpaint_ckpt, reconstruct),
    ];
    let mut points = Vec::new();
    for (k, (label, ckpt, cfg)) in scenarios.into_iter().enumerate() {
        let Some(ckpt) = ckpt else {
            points.push(SweepPoint::failed(label, &Error::Config("checkpoint unavailable".into())));
            continue;
        };
        let o = EvalOptions {
            oracle: cfg,
            ..opts.clone()
        };
        let res = check_oracle(ckpt, oracle, opts.force).and_then(|_| run_protocols(images, &ckpt.protector, oracle, &o));
        points.push(match res.and_then(|run| {
            if let Some(dir) = gallery_dir {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                run.export_gallery(dir.join(format!("scenario_{}.png", k + 1)), 8)?;
            }
            let (p1, p2) = run.reports()?;
            Ok((p1, p2, run.unmasked_max_diff()))
        }) {
            Ok((p1, p2, diff)) => SweepPoint {
                unmasked_max_diff: diff,
                ..SweepPoint::ok(label, Some(p1), Some(p2))
            },
            Err(e) => SweepPoint::failed(label, &e),
        });
    }
    Ok(SweepReport::new("inpaint_scenario", points))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCell {
    pub model: String,
    pub dataset: String,
    pub p1: Option<MetricReport>,
    pub p2: Option<MetricReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossDatasetReport {
    pub models: Vec<String>,
    pub datasets: Vec<String>,
    /// Row-major: `cells[m * datasets.len() + d]`.
    pub cells: Vec<CrossCell>,
    pub embedder: String,
}

impl CrossDatasetReport {
    pub fn cell(&self, model: usize, dataset: usize) -> &CrossCell {
        &self.cells[model * self.datasets.len() + dataset]
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<16}", "model \\ data");
        for d in &self.datasets {
            out += &format!(" {:>28}", d);
        }
        out.push('\n');
        for (m, name) in self.models.iter().enumerate() {
            out += &format!("{name:<16}");
            for d in 0..self.datasets.len() {
                let c = self.cell(m, d);
                out += &match (&c.p1, &c.p2) {
                    (Some(a), Some(b)) => format!(" P1 {:>6.2}/{:.3} P2 {:>6.2}/{:.3}", a.psnr, a.ssim, b.psnr, b.ssim),
                    _ => format!(" {:>28}", "failed"),
                };
            }
            out.push('\n');
        }
        out
    }
}

/// `cross_dataset`: every model on every dataset; failing cells are recorded.
pub fn cross_dataset(
    bank: &[(String, Checkpoint)],
    datasets: &[(String, Vec<ImageTensor>)],
    oracle: &OracleWeights,
    opts: &EvalOptions,
) -> CrossDatasetReport {
    let mut cells = Vec::new();
    for (mname, ckpt) in bank {
        for (dname, images) in datasets {
            let res = eval_protocols(images, ckpt, oracle, opts);
            cells.push(match res {
                Ok((p1, p2)) => CrossCell {
                    model: mname.clone(),
                    dataset: dname.clone(),
                    p1: Some(p1),
                    p2: Some(p2),
                    error: None,
                },
                Err(e) => CrossCell {
                    model: mname.clone(),
                    dataset: dname.clone(),
                    p1: None,
                    p2: None,
                    error: Some(e.to_string()),
                },
            });
        }
    }
    CrossDatasetReport {
        models: bank.iter().map(|(n, _)| n.clone()).collect(),
        datasets: datasets.iter().map(|(n, _)| n.clone()).collect(),
        cells,
        embedder: EMBEDDER.into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::default_denoiser_spec;
    use crate::imagecore::synth;
    use crate::protector::{LossHistory, UNetSpec};

    fn setup() -> (Vec<ImageTensor>, Checkpoint, OracleWeights) {
        let images = synth::corpus(4, 16, 5).images;
        let oracle = OracleWeights::init(
            UNetSpec {
                base_channels: 4,
                ..default_denoiser_spec()
            },
            16,
            1,
        )
        .unwrap();
        let protector = Protector::build(
            UNetSpec {
                depth: 2,
                base_channels: 4,
                ..UNetSpec::default()
            },
            3,
        )
        .unwrap();
        let ckpt = Checkpoint {
            protector,
            level: 50,
            oracle_hash: oracle.hash().into(),
            epoch: 0,
            config: serde_json::Value::Null,
            history: LossHistory::default(),
        };
        (images, ckpt, oracle)
    }

    #[test]
    fn strength_zero_makes_p2_equal_direct_metrics() {
        let (images, ckpt, oracle) = setup();
        let opts = EvalOptions::for_config(&OracleConfig::default().with_strength(0));
        let (p1, p2) = eval_protocols(&images, &ckpt, &oracle, &opts).unwrap();
        assert!((p1.psnr - p2.psnr).abs() < 1e-6);
        assert!((p1.ssim - p2.ssim).abs() < 1e-6);
        assert!((p1.rmse - p2.rmse).abs() < 1e-6);
    }

    #[test]
    fn oracle_mismatch_requires_force() {
        let (images, mut ckpt, oracle) = setup();
        ckpt.oracle_hash = "other".into();
        let mut opts = EvalOptions::default();
        assert!(matches!(eval_protocols(&images, &ckpt, &oracle, &opts), Err(Error::Integrity { .. })));
        opts.force = true;
        assert!(eval_protocols(&images, &ckpt, &oracle, &opts).is_ok());
    }

    #[test]
    fn strength_sweep_has_reference_row() {
        let (images, ckpt, oracle) = setup();
        let r = strength_sweep(&images, &ckpt, &oracle, &EvalOptions::default(), &DEFAULT_STRENGTHS).unwrap();
        assert_eq!(r.points.len(), 4);
        assert_eq!(r.points[0].setting, "reference");
        assert!(r.points[0].p1.is_some() && r.points[0].p2.is_none());
        r.validate().unwrap();
        assert_eq!(SweepReport::from_json(&r.to_json().unwrap()).unwrap(), r);
    }

    #[test]
    fn robustness_sweep_covers_grid_and_rejects_even_kernels() {
        let (images, ckpt, oracle) = setup();
        let opts = EvalOptions::default();
        assert!(robustness_sweep(&images, &ckpt, &oracle, &opts, &[4], &[]).is_err());
        let r = robustness_sweep(&images, &ckpt, &oracle, &opts, &DEFAULT_BLUR_KERNELS, &DEFAULT_JPEG_QUALITIES).unwrap();
        let labels: Vec<&str> = r.points.iter().map(|p| p.setting.as_str()).collect();
        assert_eq!(labels, ["none", "blur_3", "blur_7", "blur_11", "jpeg_75", "jpeg_30", "jpeg_5"]);
        assert_eq!(r.notes.len(), 6);
        let dir = tempfile::tempdir().unwrap();
        r.write(dir.path().join("robustness")).unwrap();
        assert!(dir.path().join("robustness.png").exists());
    }

    #[test]
    fn inpaint_scenarios_preserve_unmasked_pixels() {
        let (images, ckpt, oracle) = setup();
        let dir = tempfile::tempdir().unwrap();
        let r = inpaint_scenarios(&images, Some(&ckpt), None, &oracle, &EvalOptions::default(), Some(dir.path())).unwrap();
        assert_eq!(r.points.len(), 3);
        assert!(r.points[0].unmasked_max_diff.unwrap() <= 1.0 / 255.0);
        assert!(r.points[1].error.is_some());
        assert!(r.points[2].error.is_some());
        assert!(dir.path().join("scenario_1.png").exists());
    }

    #[test]
    fn normalization_constants() {
        let m = MetricReport {
            protocol: Protocol::P1,
            psnr: 30.0,
            rmse: 5.0,
            ssim: 0.5,
            fid: Some(100.0),
            fid_jitter: false,
            perceptual: 0.1,
            samples: 2,
            embedder: EMBEDDER.into(),
        };
        let n = Normalized::of(&m);
        assert_eq!((n.psnr, n.rmse, n.log10_fid), (1.0, 0.5, Some(2.0)));
    }

    #[test]
    fn cross_dataset_grid_and_diagonal_consistency() {
        let (images, ckpt, oracle) = setup();
        let bank: Vec<(String, Checkpoint)> = (0..3).map(|i| (format!("m{i}"), ckpt.clone())).collect();
        let data: Vec<(String, Vec<ImageTensor>)> = (0..3).map(|i| (format!("d{i}"), images[i..i + 2].to_vec())).collect();
        let opts = EvalOptions::default();
        let r = cross_dataset(&bank, &data, &oracle, &opts);
        assert_eq!(r.cells.len(), 9);
        let (p1, p2) = eval_protocols(&data[1].1, &ckpt, &oracle, &opts).unwrap();
        assert_eq!(r.cell(1, 1).p1.as_ref(), Some(&p1));
        assert_eq!(r.cell(1, 1).p2.as_ref(), Some(&p2));
        let back: CrossDatasetReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
        assert!(r.to_table().contains("m2"));
    }
}
