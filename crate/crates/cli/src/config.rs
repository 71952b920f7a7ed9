//! Run configuration: one TOML file with per-stage sections, overridable by
//! command-line flags and echoed into every output directory.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use tamt_core::dataset::DatasetConfig;
use tamt_core::separation::SeparationConfig;
use tamt_core::GridConfig;

/// File name of the resolved configuration inside a run directory.
pub const RUN_CONFIG_FILE: &str = "run_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixConfig {
    /// Sources per mixture.
    pub sources: usize,
    /// Length of a self-generated mixture in frames.
    pub frames: usize,
    /// Additive white noise level; absent for a clean mixture.
    pub snr_db: Option<f64>,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self { sources: 2, frames: 600, snr_db: None }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub grid: GridConfig,
    pub mix: MixConfig,
    pub dataset: DatasetConfig,
    pub separation: SeparationConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Write the resolved configuration into `dir`.
    pub fn save_into(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(RUN_CONFIG_FILE), self.to_toml()?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.separation.notes.validate()?;
        anyhow::ensure!(self.mix.sources >= 1, "mix.sources must be >= 1");
        anyhow::ensure!(self.mix.frames >= 1, "mix.frames must be >= 1");
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.seed = 42;
        cfg.mix.snr_db = Some(20.0);
        cfg.separation.associate = true;
        let back = RunConfig::parse(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = RunConfig::parse("seed = 3\n[separation]\nthreshold = 0.4\n[grid]\nhop = 512\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.separation.threshold, 0.4);
        assert_eq!(cfg.grid.hop, 512);
        assert_eq!(cfg.grid.sample_rate, 22_050);
        assert_eq!(cfg.dataset, DatasetConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::parse("sed = 3\n").is_err());
        assert!(RunConfig::parse("[separation]\nthreshhold = 0.4\n").is_err());
        assert!(RunConfig::parse("[grid]\nhops = 2\n").is_err());
    }
}
