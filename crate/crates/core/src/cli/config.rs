use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{BaselineMode, EvalSettings, TransferSettings};
use crate::forge::TrainConfig;
use crate::tensor::ArchDescriptor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSetConfig {
    pub n_tasks: usize,
    pub repeats: usize,
    /// Seeds both the task suite and the per-slot training seeds.
    pub seed: u64,
    pub arch: ArchDescriptor,
    pub train: TrainConfig,
}

impl Default for ModelSetConfig {
    fn default() -> Self {
        ModelSetConfig {
            n_tasks: 16,
            repeats: 10,
            seed: 7,
            arch: ArchDescriptor::desk_default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSelection {
    pub seeds: Vec<u64>,
    pub modes: Vec<BaselineMode>,
    pub formats: Vec<ReportFormat>,
    pub plot: bool,
}

impl Default for EvalSelection {
    fn default() -> Self {
        EvalSelection {
            seeds: vec![0, 1, 2],
            modes: BaselineMode::ALL.to_vec(),
            formats: vec![ReportFormat::Json, ReportFormat::Csv],
            plot: false,
        }
    }
}

/// Everything a run depends on. Written to the output directory as
/// `config.json` after flags have been applied.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub modelset: ModelSetConfig,
    pub second_order: EvalSettings,
    pub transfer: TransferSettings,
    pub eval: EvalSelection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {}", path.display(), e)))
    }

    pub fn load_or_default(path: Option<&PathBuf>) -> Result<Self> {
        match path {
            Some(p) => RunConfig::load(p),
            None => Ok(RunConfig::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.modelset.arch.validate()?;
        self.modelset.train.validate()?;
        self.second_order.validate()?;
        if self.eval.seeds.is_empty() {
            return Err(Error::Config("no evaluation seeds".into()));
        }
        Ok(())
    }

    /// Writes the resolved configuration next to the run's outputs.
    pub fn echo(&self, out: &Path) -> Result<()> {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        crate::store::container::write_atomic(&out.join("config.json"), &bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_config_fills_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"modelset": {"n_tasks": 4}, "eval": {"seeds": [5]}}"#).unwrap();
        assert_eq!(c.modelset.n_tasks, 4);
        assert_eq!(c.modelset.repeats, 10);
        assert_eq!(c.eval.seeds, vec![5]);
        assert_eq!(c.second_order.ks, vec![1, 5, 10]);
        c.validate().unwrap();
        let back: RunConfig = serde_json::from_slice(&serde_json::to_vec(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
