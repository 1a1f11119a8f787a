//! TOML run configuration: `[train]` mirrors `TrainConfig`, `[oracle]` mirrors
//! `OracleConfig`, `[data]` locates the corpus.
//!
//! ```toml
//! [data]
//! dir = "corpus"
//! size = 64
//! split_seed = 0
//!
//! [train]
//! level = 50
//! epochs = 5
//!
//! [oracle]
//! strength = 5
//! ```

use std::path::{Path, PathBuf};

use anyhow::Context;
use mamc_core::diffusion::OracleConfig;
use mamc_core::imagecore::CANONICAL_SIZE;
use mamc_core::TrainConfig;
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub dir: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub size: usize,
    pub split_seed: u64,
    pub split: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            dir: None,
            manifest: None,
            size: CANONICAL_SIZE,
            split_seed: 0,
            split: None,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub train: TrainConfig,
    /// Overrides `train.oracle` when present.
    pub oracle: Option<OracleConfig>,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let mut c: RunConfig = toml::from_str(text)?;
        if let Some(o) = c.oracle {
            c.train.oracle = o;
        }
        Ok(c)
    }

    pub fn load_or_default(path: Option<&Path>) -> anyhow::Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }
}
