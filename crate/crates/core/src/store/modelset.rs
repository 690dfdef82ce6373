use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::checkpoint::{load_checkpoint, Checkpoint};
use super::container;
use crate::error::{Error, Result};
use crate::forge::{TaskSpec, TrainConfig};
use crate::tensor::ArchDescriptor;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    /// Checkpoint path relative to the modelset root.
    pub file: String,
    pub task_id: usize,
    pub seed: u64,
    pub train_accuracy: f64,
    pub excluded: bool,
    /// Training attempts used for this slot, including the admitted one.
    pub attempts: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub suite: Vec<TaskSpec>,
    pub arch: ArchDescriptor,
    pub train_config: TrainConfig,
    pub base_seed: u64,
    pub repeats: usize,
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn n_tasks(&self) -> usize {
        self.suite.len()
    }

    /// Non-excluded row indices grouped by task id, in ascending row order.
    pub fn admitted_by_task(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, r) in self.rows.iter().enumerate() {
            if !r.excluded {
                map.entry(r.task_id).or_default().push(i);
            }
        }
        map
    }

    pub fn admitted(&self) -> Vec<usize> {
        (0..self.rows.len())
            .filter(|&i| !self.rows[i].excluded)
            .collect()
    }

    pub fn to_json_bytes(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    /// Structural checks that do not touch the filesystem.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "manifest schema version {} unsupported (expected {})",
                self.schema_version, MANIFEST_SCHEMA_VERSION
            )));
        }
        let by_task = self.admitted_by_task();
        for t in &self.suite {
            let m = by_task.get(&t.task_id).map_or(0, Vec::len);
            if m < 2 {
                return Err(Error::ModelSetBuild {
                    task_id: t.task_id,
                    reason: format!("only {} admitted checkpoints, at least 2 required", m),
                });
            }
        }
        if let Some(r) = self.rows.iter().find(|r| r.task_id >= self.suite.len()) {
            return Err(Error::Config(format!(
                "manifest row {} references unknown task {}",
                r.file, r.task_id
            )));
        }
        Ok(())
    }
}

/// A manifest plus the directory its checkpoint paths are relative to.
#[derive(Clone, Debug)]
pub struct ModelSet {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl ModelSet {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let path = root.join(MANIFEST_FILE);
        let bytes = container::read_file(&path)?;
        let manifest: Manifest = serde_json::from_slice(&bytes).map_err(|e| Error::Metadata {
            path: path.clone(),
            source: e,
        })?;
        manifest.validate()?;
        Ok(ModelSet { root, manifest })
    }

    pub fn save_manifest(&self) -> Result<()> {
        container::write_atomic(
            &self.root.join(MANIFEST_FILE),
            &self.manifest.to_json_bytes()?,
        )
    }

    pub fn checkpoint_path(&self, row: usize) -> PathBuf {
        self.root.join(&self.manifest.rows[row].file)
    }

    /// Loads row `row` and checks it against the manifest entry.
    pub fn load(&self, row: usize) -> Result<Checkpoint> {
        let r = &self.manifest.rows[row];
        let path = self.checkpoint_path(row);
        let ck = load_checkpoint(&path)?;
        if ck.task_id != r.task_id || ck.seed != r.seed {
            return Err(Error::Consistency(format!(
                "{} embeds task {} seed {} but the manifest row says task {} seed {}",
                path.display(),
                ck.task_id,
                ck.seed,
                r.task_id,
                r.seed
            )));
        }
        if ck.arch != self.manifest.arch {
            return Err(Error::ArchMismatch(format!(
                "{} does not use the modelset architecture",
                path.display()
            )));
        }
        Ok(ck)
    }

    /// Loads every row (excluded rows included) in manifest order.
    pub fn load_all(&self) -> Result<Vec<Checkpoint>> {
        (0..self.manifest.rows.len()).map(|i| self.load(i)).collect()
    }

    /// Verifies every row resolves to a matching checkpoint file.
    pub fn verify(&self) -> Result<()> {
        self.manifest.validate()?;
        for i in 0..self.manifest.rows.len() {
            self.load(i)?;
        }
        Ok(())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}
