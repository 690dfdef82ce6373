use std::path::Path;

use serde::{Deserialize, Serialize};

use super::container;
use crate::error::{Error, Result};
use crate::tensor::{ArchDescriptor, Tensor};

pub const FIRST_ORDER_KIND: &str = "first-order";

/// A trained first-order network together with its task label and provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub arch: ArchDescriptor,
    /// `conv{l}.weight` for every conv layer, then `fc.weight` and `fc.bias`.
    pub tensors: Vec<(String, Tensor)>,
    pub task_id: usize,
    pub seed: u64,
    pub train_accuracy: f64,
    pub config_hash: u64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    kind: String,
    arch: ArchDescriptor,
    task_id: usize,
    seed: u64,
    train_accuracy: f64,
    config_hash: u64,
}

pub fn conv_name(layer: usize) -> String {
    format!("conv{}.weight", layer)
}

pub const FC_WEIGHT: &str = "fc.weight";
pub const FC_BIAS: &str = "fc.bias";

/// Tensor names and shapes an architecture requires, in storage order.
pub fn expected_tensors(arch: &ArchDescriptor) -> Vec<(String, Vec<usize>)> {
    let mut out: Vec<(String, Vec<usize>)> = arch
        .convs
        .iter()
        .enumerate()
        .map(|(l, c)| (conv_name(l), c.filter_shape()))
        .collect();
    out.push((FC_WEIGHT.into(), vec![arch.n_classes, arch.feature_dim()]));
    out.push((FC_BIAS.into(), vec![arch.n_classes]));
    out
}

impl Checkpoint {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let expected = expected_tensors(&self.arch);
        if expected.len() != self.tensors.len() {
            return Err(Error::ArchMismatch(format!(
                "architecture needs {} tensors, checkpoint has {}",
                expected.len(),
                self.tensors.len()
            )));
        }
        for ((en, es), (n, t)) in expected.iter().zip(&self.tensors) {
            if en != n || es.as_slice() != t.shape() {
                return Err(Error::ArchMismatch(format!(
                    "expected tensor {} {:?}, found {} {:?}",
                    en,
                    es,
                    n,
                    t.shape()
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.train_accuracy) {
            return Err(Error::Contract(format!(
                "train accuracy {} outside [0,1]",
                self.train_accuracy
            )));
        }
        Ok(())
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Filters of conv layer `layer` (0-based), shape `(g, c, h, w)`.
    pub fn conv_weight(&self, layer: usize) -> &Tensor {
        &self.tensors[layer].1
    }

    pub fn conv_weight_mut(&mut self, layer: usize) -> &mut Tensor {
        &mut self.tensors[layer].1
    }

    pub fn num_conv_layers(&self) -> usize {
        self.arch.convs.len()
    }

    pub fn fc_weight(&self) -> &Tensor {
        &self.tensors[self.arch.convs.len()].1
    }

    pub fn fc_bias(&self) -> &Tensor {
        &self.tensors[self.arch.convs.len() + 1].1
    }

    fn meta_bytes(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(&CheckpointMeta {
            kind: FIRST_ORDER_KIND.into(),
            arch: self.arch.clone(),
            task_id: self.task_id,
            seed: self.seed,
            train_accuracy: self.train_accuracy,
            config_hash: self.config_hash,
        })?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        Ok(container::encode(&self.meta_bytes()?, &self.tensors))
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let (meta, tensors) = container::decode(bytes, path)?;
        let meta: CheckpointMeta = serde_json::from_slice(&meta).map_err(|e| Error::Metadata {
            path: path.to_path_buf(),
            source: e,
        })?;
        if meta.kind != FIRST_ORDER_KIND {
            return Err(Error::ArchMismatch(format!(
                "{} holds a {} container, expected {}",
                path.display(),
                meta.kind,
                FIRST_ORDER_KIND
            )));
        }
        let ck = Checkpoint {
            arch: meta.arch,
            tensors,
            task_id: meta.task_id,
            seed: meta.seed,
            train_accuracy: meta.train_accuracy,
            config_hash: meta.config_hash,
        };
        ck.validate()?;
        Ok(ck)
    }

    /// Serialized size implied by the architecture and metadata.
    pub fn expected_file_len(&self) -> Result<usize> {
        Ok(container::container_len(self.meta_bytes()?.len(), &self.tensors))
    }
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    container::write_atomic(path, &ck.to_bytes()?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&container::read_file(path)?, path)
}
