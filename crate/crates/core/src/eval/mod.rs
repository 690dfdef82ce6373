//! Evaluation protocols over a modelset: task classification, task
//! retrieval, transferability against parameter similarity, and the branch
//! and alignment ablations.

mod cluster;
mod metrics;
mod plot;
mod protocols;
mod report;

pub use cluster::{ari, average_ranks, kmeans, spearman, KMeans};
pub use metrics::{descending_order, hit_rate, random_cmc, random_topk, rank_of};
pub use plot::{bar_chart_svg, scatter_svg};
pub use protocols::{
    ablate_alignment, ablate_branches, eval_classification, eval_retrieval, eval_transferability,
    train_on_split, TransferSettings,
};
pub use report::{
    Correlation, EvalReport, MetricRow, Protocol, QueryDetail, TransferPair, REPORT_SCHEMA_VERSION,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::second_order::{FrontEnd, SecondOrderTrainConfig};
use crate::store::{Checkpoint, Manifest, ModelSet};

/// The four rows of the classification and retrieval tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    RandomPrediction,
    FcOnly,
    FrobeniusUnaligned,
    FrobeniusAligned,
}

impl BaselineMode {
    pub const ALL: [BaselineMode; 4] = [
        BaselineMode::RandomPrediction,
        BaselineMode::FcOnly,
        BaselineMode::FrobeniusUnaligned,
        BaselineMode::FrobeniusAligned,
    ];

    /// Second-order front end trained by this mode; `None` for random prediction.
    pub fn front_end(self) -> Option<FrontEnd> {
        match self {
            BaselineMode::RandomPrediction => None,
            BaselineMode::FcOnly => Some(FrontEnd::RawWeights),
            BaselineMode::FrobeniusUnaligned => Some(FrontEnd::UNALIGNED),
            BaselineMode::FrobeniusAligned => Some(FrontEnd::ALIGNED),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BaselineMode::RandomPrediction => "random_prediction",
            BaselineMode::FcOnly => "fc_only",
            BaselineMode::FrobeniusUnaligned => "frobenius_unaligned",
            BaselineMode::FrobeniusAligned => "frobenius_aligned",
        }
    }
}

impl fmt::Display for BaselineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" | "random_prediction" => Ok(BaselineMode::RandomPrediction),
            "fc" | "fc_only" => Ok(BaselineMode::FcOnly),
            "unaligned" | "frobenius_unaligned" => Ok(BaselineMode::FrobeniusUnaligned),
            "aligned" | "frobenius_aligned" => Ok(BaselineMode::FrobeniusAligned),
            other => Err(Error::Config(format!(
                "unknown mode {:?} (expected random, fc, unaligned, aligned)",
                other
            ))),
        }
    }
}

/// Knobs shared by every protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub train: SecondOrderTrainConfig,
    /// Fusion weights; `None` trains the first branch only.
    pub branch_weights: Option<Vec<f64>>,
    pub second_filters: Option<Vec<usize>>,
    /// Branch whose logits serve as parameter features for retrieval and similarity.
    pub feature_branch: usize,
    /// Cut-offs reported for top-k / rank-k.
    pub ks: Vec<usize>,
    /// Concurrent training runs; results never depend on it.
    pub jobs: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            train: SecondOrderTrainConfig::default(),
            branch_weights: None,
            second_filters: None,
            feature_branch: 0,
            ks: vec![1, 5, 10],
            jobs: 1,
        }
    }
}

impl EvalSettings {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.ks.is_empty() || self.ks.contains(&0) || self.ks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "cut-offs {:?} must be positive and strictly increasing",
                self.ks
            )));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        Ok(())
    }
}

/// A manifest together with its admitted checkpoints, loaded once.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub manifest: Manifest,
    checkpoints: Vec<Option<Checkpoint>>,
}

impl Corpus {
    /// Loads every admitted checkpoint of `ms`.
    pub fn load(ms: &ModelSet) -> Result<Self> {
        let checkpoints = ms
            .manifest
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| if r.excluded { Ok(None) } else { ms.load(i).map(Some) })
            .collect::<Result<Vec<_>>>()?;
        Ok(Corpus {
            manifest: ms.manifest.clone(),
            checkpoints,
        })
    }

    /// Builds a corpus from in-memory checkpoints, one per manifest row
    /// (`None` for excluded rows).
    pub fn new(manifest: Manifest, checkpoints: Vec<Option<Checkpoint>>) -> Result<Self> {
        if checkpoints.len() != manifest.rows.len() {
            return Err(Error::Consistency(format!(
                "{} checkpoints for {} manifest rows",
                checkpoints.len(),
                manifest.rows.len()
            )));
        }
        for (i, (row, ck)) in manifest.rows.iter().zip(&checkpoints).enumerate() {
            match ck {
                None if !row.excluded => {
                    return Err(Error::Consistency(format!("admitted row {} has no checkpoint", i)))
                }
                Some(ck) if ck.task_id != row.task_id || ck.arch != manifest.arch => {
                    return Err(Error::Consistency(format!(
                        "checkpoint for row {} does not match its manifest entry",
                        i
                    )))
                }
                _ => {}
            }
        }
        Ok(Corpus {
            manifest,
            checkpoints,
        })
    }

    pub fn checkpoint(&self, row: usize) -> Result<&Checkpoint> {
        self.checkpoints
            .get(row)
            .and_then(|c| c.as_ref())
            .ok_or_else(|| Error::Split(format!("row {} is excluded or out of range", row)))
    }

    pub fn n_tasks(&self) -> usize {
        self.manifest.n_tasks()
    }
}
