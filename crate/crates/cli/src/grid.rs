//! Benchmark grid files.
//!
//! ```toml
//! version = 1
//! modes = ["rb", "fil", "rb_ef"]
//! ablation = true
//! alpha_sweep = [1, 2, 3, 4]
//!
//! [retrieval]   # base config; defaults to the run config's [retrieval]
//! k2 = 7
//! ```

use std::path::Path;

use anyhow::{bail, Context};
use serde::Deserialize;

use mscale_core::generation::GenerationMode;
use mscale_core::RetrievalConfig;
use mscale_eval::{ablation_grid, alpha_sweep, NamedConfig};

pub const GRID_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub base: RetrievalConfig,
    pub modes: Vec<GenerationMode>,
    pub ablation: bool,
    pub alphas: Vec<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    version: u32,
    #[serde(default)]
    modes: Option<Vec<GenerationMode>>,
    #[serde(default)]
    ablation: bool,
    #[serde(default)]
    alpha_sweep: Vec<usize>,
    #[serde(default)]
    retrieval: Option<toml::Table>,
}

impl Grid {
    pub fn load(path: Option<&Path>, base: &RetrievalConfig) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self {
                base: base.clone(),
                modes: GenerationMode::ALL.to_vec(),
                ablation: false,
                alphas: Vec::new(),
            });
        };
        let raw = std::fs::read_to_string(path).with_context(|| format!("reading grid {}", path.display()))?;
        Self::parse(&raw, base).with_context(|| format!("in grid {}", path.display()))
    }

    /// `base` supplies every retrieval key the grid leaves out.
    pub fn parse(raw: &str, base: &RetrievalConfig) -> anyhow::Result<Self> {
        let f: GridFile = toml::from_str(raw)?;
        if f.version != GRID_VERSION {
            bail!("grid version {} is not supported (expected {GRID_VERSION})", f.version);
        }
        let base = match f.retrieval {
            None => base.clone(),
            Some(overrides) => {
                let mut merged = toml::Table::try_from(base).context("encoding base config")?;
                merged.extend(overrides);
                merged.try_into().context("invalid [retrieval] in grid")?
            }
        };
        let modes = f.modes.unwrap_or_else(|| GenerationMode::ALL.to_vec());
        if modes.is_empty() {
            bail!("grid lists no generation modes");
        }
        Ok(Self {
            base,
            modes,
            ablation: f.ablation,
            alphas: f.alpha_sweep,
        })
    }

    /// The base row, then ablation rows, then the alpha sweep.
    pub fn configs(&self) -> Vec<NamedConfig> {
        let mut out = vec![NamedConfig::new("main", "base", self.base.clone())];
        if self.ablation {
            out.extend(ablation_grid(&self.base));
        }
        out.extend(alpha_sweep(&self.base, &self.alphas));
        out
    }
}
