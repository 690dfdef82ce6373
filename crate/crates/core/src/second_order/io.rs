use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Branch, FrontEnd, SecondOrderParams};
use crate::error::{Error, Result};
use crate::store::container;
use crate::tensor::{ArchDescriptor, Tensor};

pub const SECOND_ORDER_KIND: &str = "second-order";

#[derive(Deserialize)]
struct Kind {
    kind: String,
}

#[derive(Serialize, Deserialize)]
struct ParamsMeta {
    kind: String,
    arch: ArchDescriptor,
    front_end: FrontEnd,
    n_tasks: usize,
    branch_weights: Vec<f64>,
}

impl SecondOrderParams {
    fn named_tensors(&self) -> Result<Vec<(String, Tensor)>> {
        let mut out = Vec::new();
        for (l, b) in self.branches.iter().enumerate() {
            if let Some(phi) = &b.phi {
                out.push((format!("branch{}.phi", l), phi.clone()));
            }
            out.push((format!("branch{}.weight", l), b.weight.clone()));
            out.push((format!("branch{}.bias", l), Tensor::new(vec![b.bias.len()], b.bias.clone())?));
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let meta = serde_json::to_vec(&ParamsMeta {
            kind: SECOND_ORDER_KIND.into(),
            arch: self.arch.clone(),
            front_end: self.front_end,
            n_tasks: self.n_tasks,
            branch_weights: self.branch_weights.clone(),
        })?;
        Ok(container::encode(&meta, &self.named_tensors()?))
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let (meta, tensors) = container::decode(bytes, path)?;
        let bad_meta = |e| Error::Metadata {
            path: path.to_path_buf(),
            source: e,
        };
        let kind: Kind = serde_json::from_slice(&meta).map_err(bad_meta)?;
        if kind.kind != SECOND_ORDER_KIND {
            return Err(Error::ArchMismatch(format!(
                "{} holds a {} container, expected {}",
                path.display(),
                kind.kind,
                SECOND_ORDER_KIND
            )));
        }
        let meta: ParamsMeta = serde_json::from_slice(&meta).map_err(bad_meta)?;
        let mut it = tensors.into_iter();
        let mut take = |name: String| -> Result<Tensor> {
            match it.next() {
                Some((n, t)) if n == name => Ok(t),
                Some((n, _)) => Err(Error::ArchMismatch(format!("expected tensor {}, found {}", name, n))),
                None => Err(Error::ArchMismatch(format!("missing tensor {}", name))),
            }
        };
        let has_phi = matches!(meta.front_end, FrontEnd::Frobenius { .. });
        let mut branches = Vec::with_capacity(meta.arch.convs.len());
        for l in 0..meta.arch.convs.len() {
            let phi = if has_phi {
                Some(take(format!("branch{}.phi", l))?)
            } else {
                None
            };
            let weight = take(format!("branch{}.weight", l))?;
            let bias = take(format!("branch{}.bias", l))?.into_data();
            branches.push(Branch { phi, weight, bias });
        }
        if it.next().is_some() {
            return Err(Error::ArchMismatch(format!(
                "{} has tensors beyond the {} branches",
                path.display(),
                branches.len()
            )));
        }
        let params = SecondOrderParams {
            arch: meta.arch,
            front_end: meta.front_end,
            n_tasks: meta.n_tasks,
            branch_weights: meta.branch_weights,
            branches,
        };
        params.validate()?;
        Ok(params)
    }
}

pub fn save_params(params: &SecondOrderParams, path: &Path) -> Result<()> {
    container::write_atomic(path, &params.to_bytes()?)
}

pub fn load_params(path: &Path) -> Result<SecondOrderParams> {
    SecondOrderParams::from_bytes(&container::read_file(path)?, path)
}
