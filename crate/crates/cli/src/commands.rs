use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mamc_core::diffusion::remote::RemoteOracle;
use mamc_core::diffusion::{default_denoiser_spec, pretrain_oracle, PretrainConfig};
use mamc_core::eval::{
    self, EvalOptions, SweepReport, DEFAULT_ALPHA_R2, DEFAULT_BLUR_KERNELS, DEFAULT_JPEG_QUALITIES, DEFAULT_STRENGTHS,
};
use mamc_core::imagecore::{split_dataset, synth, Dataset};
use mamc_core::protector::Checkpoint;
use mamc_core::training::{self, BankEntry, BankManifest, TrainCache, MANIFEST_FILE};
use mamc_core::{DatasetSplit, OracleMode, OracleWeights, TrainConfig};

use crate::config::RunConfig;
use crate::server::{self, AppState, Bank, PreviewOracle};

#[derive(Debug, Parser)]
#[command(name = "mamc", version, about = "Learned adversarial protection against diffusion-based editing")]
pub struct Cli {
    /// Debug-level logs.
    #[arg(long, short, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic image corpus.
    Corpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Pretrain and freeze the diffusion oracle.
    Oracle {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one protector.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        oracle: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        level: Option<u32>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Also write `<out stem>_curves.{json,png}`.
        #[arg(long)]
        curves: bool,
    },
    /// P1/P2 metrics of a checkpoint on the test split.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        oracle: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        strength: Option<u8>,
        /// Evaluate even if the checkpoint was trained against another oracle.
        #[arg(long)]
        force: bool,
        /// Write a side-by-side gallery PNG.
        #[arg(long)]
        gallery: Option<PathBuf>,
    },
    /// Parameter sweeps; writes `<out>.json` and `<out>.txt`.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        oracle: PathBuf,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Base checkpoint (strength, postprocess, inpaint axes).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Protector trained against the inpainting oracle (inpaint axis).
        #[arg(long)]
        inpaint_checkpoint: Option<PathBuf>,
        /// Training cache directory (variant, alpha-r2 axes).
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Protect a single image.
    Protect {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        level: Option<u32>,
        #[arg(long, conflicts_with = "checkpoint", required_unless_present = "checkpoint")]
        bank: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
    /// Train a protector for every balance level.
    Bank {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        oracle: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        bank: Option<PathBuf>,
        /// Local oracle for previews; otherwise the remote endpoint from the environment.
        #[arg(long)]
        oracle: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Strength,
    Postprocess,
    Variant,
    AlphaR2,
    Inpaint,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Image directory (overrides `[data] dir`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Use an in-memory synthetic corpus of this many images instead of a directory.
    #[arg(long, conflicts_with = "data")]
    pub synthetic: Option<usize>,
}

struct Loaded {
    run: RunConfig,
    data: Dataset,
    split: DatasetSplit,
}

impl DataArgs {
    fn load(&self) -> anyhow::Result<Loaded> {
        let run = RunConfig::load_or_default(self.config.as_deref())?;
        let data = match (self.synthetic, self.data.as_ref().or(run.data.dir.as_ref())) {
            (Some(n), _) => synth::corpus(n, run.data.size, run.data.split_seed),
            (None, Some(dir)) => Dataset::from_dir(dir, run.data.manifest.as_deref(), run.data.size)
                .with_context(|| format!("loading corpus from {}", dir.display()))?,
            (None, None) => bail!("no corpus: pass --data <dir>, --synthetic <n>, or set [data] dir in --config"),
        };
        let split = match &run.data.split {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => split_dataset(&data.ids, run.data.split_seed)?,
        };
        Ok(Loaded { run, data, split })
    }
}

fn load_oracle(path: &Path) -> anyhow::Result<OracleWeights> {
    OracleWeights::load(path).with_context(|| format!("loading oracle {}", path.display()))
}

fn load_checkpoint(path: &Path, oracle_hash: Option<&str>) -> anyhow::Result<Checkpoint> {
    let (ckpt, report) = Checkpoint::load(path, oracle_hash).with_context(|| format!("loading {}", path.display()))?;
    for w in report.warnings {
        tracing::warn!(path = %path.display(), "{w}");
    }
    Ok(ckpt)
}

/// Resolves a protector from either a bank directory or a single checkpoint.
pub fn resolve_checkpoint(bank: Option<&Path>, checkpoint: Option<&Path>, level: Option<u32>) -> anyhow::Result<Checkpoint> {
    match (bank, checkpoint) {
        (_, Some(p)) => {
            let ckpt = load_checkpoint(p, None)?;
            if let Some(l) = level.filter(|&l| l != ckpt.level) {
                bail!("{} was trained at level {}, not {l}", p.display(), ckpt.level);
            }
            Ok(ckpt)
        }
        (Some(dir), None) => {
            let level = level.ok_or_else(|| anyhow!("--level is required with --bank"))?;
            let manifest = BankManifest::load(dir.join(MANIFEST_FILE))?;
            let entry = manifest
                .entries
                .iter()
                .find(|e| e.level() == level)
                .ok_or_else(|| anyhow!("level {level} is not in the bank"))?;
            match entry {
                BankEntry::Available { checkpoint, .. } => load_checkpoint(&dir.join(checkpoint), Some(&manifest.oracle_hash)),
                BankEntry::Unavailable { reason, .. } => bail!("level {level} is unavailable: {reason}"),
            }
        }
        (None, None) => bail!("pass --bank or --checkpoint"),
    }
}

fn curves_stem(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}_curves"))
}

fn print_json(v: &impl serde::Serialize) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn write_sweep(report: &SweepReport, out: &Path) -> anyhow::Result<()> {
    report.write(out)?;
    print!("{}", report.to_table());
    Ok(())
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Corpus { out, count, size, seed } => {
            synth::corpus(count, size, seed).write_dir(&out)?;
            tracing::info!(count, size, out = %out.display(), "corpus written");
        }
        Command::Oracle { data, out, epochs, seed } => {
            let loaded = data.load()?;
            let cfg = PretrainConfig {
                epochs,
                seed,
                ..PretrainConfig::default()
            };
            let oracle = pretrain_oracle(&loaded.data, default_denoiser_spec(), &cfg, |epoch, loss| {
                tracing::info!(epoch, loss, "oracle epoch");
            })?;
            oracle.save(&out)?;
            print_json(&serde_json::json!({ "oracle_hash": oracle.hash(), "path": out }))?;
        }
        Command::Train {
            data,
            oracle,
            out,
            level,
            epochs,
            curves,
        } => {
            let loaded = data.load()?;
            let oracle = load_oracle(&oracle)?;
            let mut cfg: TrainConfig = loaded.run.train.clone();
            if let Some(l) = level {
                cfg.level = l;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            let (ckpt, mut report) = training::train(&loaded.split, &loaded.data, &cfg, &oracle)?;
            ckpt.save(&out)?;
            report.checkpoint_path = Some(out.clone());
            if curves {
                let (json, png) = training::emit_loss_curves(&report, curves_stem(&out))?;
                tracing::info!(json = %json.display(), png = %png.display(), "loss curves written");
            }
            print_json(&report)?;
        }
        Command::Evaluate {
            data,
            oracle,
            checkpoint,
            strength,
            force,
            gallery,
        } => {
            let loaded = data.load()?;
            let oracle = load_oracle(&oracle)?;
            let ckpt = load_checkpoint(&checkpoint, None)?;
            let mut opts = EvalOptions::for_config(&loaded.run.train.oracle);
            opts.force = force;
            if let Some(s) = strength {
                opts.oracle = opts.oracle.with_strength(s);
            }
            let test = loaded.data.select(&loaded.split.test)?;
            let (p1, p2) = eval::eval_protocols(&test, &ckpt, &oracle, &opts)?;
            if let Some(path) = gallery {
                eval::run_protocols(&test, &ckpt.protector, &oracle, &opts)?.export_gallery(&path, 8)?;
            }
            print_json(&serde_json::json!({ "p1": p1, "p2": p2 }))?;
        }
        Command::Sweep {
            data,
            oracle,
            axis,
            checkpoint,
            inpaint_checkpoint,
            cache,
            out,
            force,
        } => {
            let loaded = data.load()?;
            let oracle = load_oracle(&oracle)?;
            let mut opts = EvalOptions::for_config(&loaded.run.train.oracle);
            opts.force = force;
            let test = loaded.data.select(&loaded.split.test)?;
            let need_ckpt = || -> anyhow::Result<Checkpoint> {
                let p = checkpoint.as_deref().ok_or_else(|| anyhow!("--checkpoint is required for this axis"))?;
                load_checkpoint(p, None)
            };
            let cache = cache.map(TrainCache::new);
            let report = match axis {
                Axis::Strength => eval::strength_sweep(&test, &need_ckpt()?, &oracle, &opts, &DEFAULT_STRENGTHS)?,
                Axis::Postprocess => eval::robustness_sweep(
                    &test,
                    &need_ckpt()?,
                    &oracle,
                    &opts,
                    &DEFAULT_BLUR_KERNELS,
                    &DEFAULT_JPEG_QUALITIES,
                )?,
                Axis::Variant => {
                    let train = loaded.data.select(&loaded.split.train)?;
                    eval::ablation_suite(&train, &test, &loaded.run.train, &oracle, cache.as_ref())?
                }
                Axis::AlphaR2 => {
                    let train = loaded.data.select(&loaded.split.train)?;
                    eval::weight_sweep(&train, &test, &loaded.run.train, &oracle, &DEFAULT_ALPHA_R2, cache.as_ref())?
                }
                Axis::Inpaint => {
                    let recon = checkpoint.as_deref().map(|p| load_checkpoint(p, None)).transpose()?;
                    let inpaint = inpaint_checkpoint.as_deref().map(|p| load_checkpoint(p, None)).transpose()?;
                    if let Some(c) = &inpaint {
                        let trained: Option<TrainConfig> = serde_json::from_value(c.config.clone()).ok();
                        if trained.map(|t| t.oracle.mode) != Some(OracleMode::Inpaint) {
                            tracing::warn!("--inpaint-checkpoint was not trained against the inpainting oracle");
                        }
                    }
                    let gallery = out.with_extension("gallery");
                    eval::inpaint_scenarios(&test, recon.as_ref(), inpaint.as_ref(), &oracle, &opts, Some(&gallery))?
                }
            };
            write_sweep(&report, &out)?;
        }
        Command::Protect {
            input,
            out,
            level,
            bank,
            checkpoint,
            size,
        } => {
            let ckpt = resolve_checkpoint(bank.as_deref(), checkpoint.as_deref(), level)?;
            let bytes = std::fs::read(&input).with_context(|| format!("reading {}", input.display()))?;
            let (_, _, png) = server::protect_png(&ckpt.protector, &bytes, size)
                .with_context(|| format!("protecting {}", input.display()))?;
            std::fs::write(&out, png).with_context(|| format!("writing {}", out.display()))?;
            tracing::info!(level = ckpt.level, out = %out.display(), "protected");
        }
        Command::Bank { data, oracle, out, epochs } => {
            let loaded = data.load()?;
            let oracle = load_oracle(&oracle)?;
            let mut base = loaded.run.train.clone();
            if let Some(e) = epochs {
                base.epochs = e;
            }
            let manifest = training::train_balance_bank(&loaded.split, &loaded.data, &base, &oracle, &out)?;
            print_json(&manifest)?;
        }
        Command::Serve { bank, oracle, addr, size } => {
            let preview = match oracle {
                Some(p) => PreviewOracle::Local(Arc::new(load_oracle(&p)?)),
                None => PreviewOracle::Remote(Arc::new(RemoteOracle::from_env(size)?)),
            };
            let oracle_hash = match &preview {
                PreviewOracle::Local(o) => Some(o.hash().to_string()),
                PreviewOracle::Remote(_) => None,
            };
            let bank = match bank {
                Some(dir) => Some(Bank::load(&dir, oracle_hash.as_deref())?),
                None => {
                    tracing::warn!("no --bank given; /levels and /protect will answer 503");
                    None
                }
            };
            let state = Arc::new(AppState::new(bank, preview, size));
            tokio::runtime::Runtime::new()?.block_on(server::serve(state, &addr))?;
        }
    }
    Ok(())
}
