use serde::{Deserialize, Serialize};

use super::SecondOrderParams;
use crate::error::Result;
use crate::store::Checkpoint;
use crate::tensor::ops::dot;

/// An L2-normalized branch output. A zero vector cannot be normalized and is
/// kept as zeros with `degenerate` set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub values: Vec<f64>,
    pub degenerate: bool,
}

impl Feature {
    pub fn from_raw(raw: Vec<f64>) -> Feature {
        let norm = dot(&raw, &raw).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Feature {
                values: vec![0.0; raw.len()],
                degenerate: true,
            };
        }
        Feature {
            values: raw.into_iter().map(|v| v / norm).collect(),
            degenerate: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    /// Cosine in [-1, 1]; 0 when either side is degenerate.
    pub cosine: f64,
    pub degenerate: bool,
}

pub fn cosine(a: &Feature, b: &Feature) -> Similarity {
    if a.degenerate || b.degenerate {
        return Similarity {
            cosine: 0.0,
            degenerate: true,
        };
    }
    Similarity {
        cosine: dot(&a.values, &b.values).clamp(-1.0, 1.0),
        degenerate: false,
    }
}

impl SecondOrderParams {
    /// The branch's logits for `ck`, normalized to unit length.
    pub fn extract_features(&self, ck: &Checkpoint, branch: usize) -> Result<Feature> {
        Ok(Feature::from_raw(self.branch_logits(ck, branch)?))
    }

    pub fn similarity(&self, a: &Checkpoint, b: &Checkpoint, branch: usize) -> Result<Similarity> {
        Ok(cosine(
            &self.extract_features(a, branch)?,
            &self.extract_features(b, branch)?,
        ))
    }
}
