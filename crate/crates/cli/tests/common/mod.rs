#![allow(dead_code)]

use std::path::{Path, PathBuf};

use mamc_core::diffusion::default_denoiser_spec;
use mamc_core::eval::{MetricReport, Protocol};
use mamc_core::imagecore::synth;
use mamc_core::protector::{Checkpoint, LossHistory};
use mamc_core::training::{BankEntry, BankManifest, MANIFEST_FILE};
use mamc_core::{ImageTensor, OracleWeights, Protector, TrainConfig, UNetSpec};

pub const SIZE: usize = 16;
pub const LEVELS: [u32; 2] = [10, 50];

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub oracle: PathBuf,
    pub bank: PathBuf,
}

/// An untrained 16 px oracle plus a two-level bank of untrained protectors.
pub fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let oracle = OracleWeights::init(default_denoiser_spec(), SIZE, 3).unwrap();
    let oracle_path = dir.path().join("oracle.mamc");
    oracle.save(&oracle_path).unwrap();
    let bank = dir.path().join("bank");
    std::fs::create_dir_all(&bank).unwrap();
    let probe = vec![synth::image(1, 0, SIZE), synth::image(1, 1, SIZE)];
    let mut entries = Vec::new();
    for (k, level) in LEVELS.into_iter().enumerate() {
        let protector = Protector::build(UNetSpec::default(), 100 + k as u64).unwrap();
        let protected = protector.protect_all(&probe, 2).unwrap();
        let config = TrainConfig {
            level,
            ..TrainConfig::default()
        };
        let ckpt = Checkpoint {
            protector,
            level,
            oracle_hash: oracle.hash().to_string(),
            epoch: 1,
            config: serde_json::to_value(config).unwrap(),
            history: LossHistory::default(),
        };
        let name = format!("level_{level:02}.mamc");
        ckpt.save(bank.join(&name)).unwrap();
        let m = MetricReport::compute(Protocol::P1, &probe, &protected).unwrap();
        entries.push(BankEntry::Available {
            level,
            checkpoint: name.into(),
            weight_hash: ckpt.weight_hash(),
            p1: m.clone(),
            p2: MetricReport { protocol: Protocol::P2, ..m },
        });
    }
    entries.push(BankEntry::Unavailable {
        level: 90,
        reason: "training diverged".into(),
    });
    BankManifest {
        oracle_hash: oracle.hash().to_string(),
        entries,
    }
    .save(bank.join(MANIFEST_FILE))
    .unwrap();
    Fixture {
        dir,
        oracle: oracle_path,
        bank,
    }
}

pub fn png_input(seed: u64, size: usize) -> Vec<u8> {
    synth::image(seed, 0, size).to_png_bytes()
}

pub fn decode(bytes: &[u8]) -> ImageTensor {
    ImageTensor::from_encoded(bytes, SIZE).unwrap()
}

pub fn write(path: &Path, bytes: &[u8]) {
    std::fs::write(path, bytes).unwrap();
}
