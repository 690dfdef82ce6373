use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::BaselineMode;
use crate::align::AlignOptions;
use crate::error::{Error, Result};
use crate::store::container::write_atomic;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Classification,
    Retrieval,
    Transferability,
    BranchAblation,
    AlignmentAblation,
}

/// One table row: a mode, branch or alignment variant with its top-k / rank-k
/// values averaged over split seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub label: String,
    pub mode: Option<BaselineMode>,
    pub branch: Option<usize>,
    pub align: Option<AlignOptions>,
    pub ks: Vec<usize>,
    /// Mean over seeds, one entry per cut-off.
    pub values: Vec<f64>,
    /// Per seed, one entry per cut-off.
    pub per_seed: Vec<Vec<f64>>,
    /// Last-epoch mean training loss per seed (empty when nothing was trained).
    pub final_train_loss: Vec<f64>,
}

impl MetricRow {
    pub fn at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.values[i])
    }

    pub fn top1(&self) -> f64 {
        self.values[0]
    }
}

/// Outcome of one held-out checkpoint (classification) or query (retrieval).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryDetail {
    pub label: String,
    pub seed: u64,
    pub row: usize,
    pub task_id: usize,
    /// 1-based rank of the true task, or of the first same-task gallery model.
    pub rank: usize,
    /// Top predictions: task ids (classification) or gallery rows (retrieval).
    pub top: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferPair {
    pub source_task: usize,
    pub target_task: usize,
    pub source_row: usize,
    pub target_row: usize,
    pub similarity: f64,
    pub ari: f64,
    /// False when k-means hit its iteration cap or a feature was degenerate;
    /// such pairs are left out of the correlation.
    pub valid: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub spearman: Option<f64>,
    pub n_pairs: usize,
    pub n_excluded: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub protocol: Protocol,
    pub mode: Option<BaselineMode>,
    pub seeds: Vec<u64>,
    pub rows: Vec<MetricRow>,
    pub queries: Vec<QueryDetail>,
    pub pairs: Vec<TransferPair>,
    pub correlation: Option<Correlation>,
    /// Wall-clock time of the run. Kept out of the serialized report so equal
    /// inputs give byte-identical files.
    #[serde(skip)]
    pub runtime: Duration,
}

impl EvalReport {
    pub fn new(protocol: Protocol, mode: Option<BaselineMode>, seeds: &[u64]) -> Self {
        EvalReport {
            schema_version: REPORT_SCHEMA_VERSION,
            protocol,
            mode,
            seeds: seeds.to_vec(),
            rows: Vec::new(),
            queries: Vec::new(),
            pairs: Vec::new(),
            correlation: None,
            runtime: Duration::ZERO,
        }
    }

    pub fn row(&self, label: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Appends the rows and details of reports of the same protocol.
    pub fn merge(reports: Vec<EvalReport>) -> Result<EvalReport> {
        let mut it = reports.into_iter();
        let mut out = it
            .next()
            .ok_or_else(|| Error::Precondition("nothing to merge".into()))?;
        for r in it {
            if r.protocol != out.protocol {
                return Err(Error::Precondition(format!(
                    "cannot merge {:?} into {:?}",
                    r.protocol, out.protocol
                )));
            }
            if r.mode != out.mode {
                out.mode = None;
            }
            out.rows.extend(r.rows);
            out.queries.extend(r.queries);
            out.pairs.extend(r.pairs);
            out.runtime += r.runtime;
        }
        Ok(out)
    }

    /// Checks the report-level invariants: fractions in [0, 1] and
    /// non-decreasing in k.
    pub fn validate(&self) -> Result<()> {
        for r in &self.rows {
            let all = std::iter::once(&r.values).chain(&r.per_seed);
            for v in all {
                if v.iter().any(|x| !(0.0..=1.0).contains(x)) || v.windows(2).any(|w| w[0] > w[1]) {
                    return Err(Error::Contract(format!(
                        "row {} has metrics {:?} outside [0,1] or decreasing in k",
                        r.label, v
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_json_bytes(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec_pretty(self)?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self> {
        Ok(serde_json::from_slice(bytes)?)
    }

    /// Summary table: one line per row, one column per cut-off.
    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let prefix = match self.protocol {
            Protocol::Retrieval => "rank",
            _ => "top",
        };
        let mut w = csv::Writer::from_writer(Vec::new());
        let ks = self.rows.first().map(|r| r.ks.clone()).unwrap_or_default();
        let mut header = vec!["label".to_string(), "branch".into()];
        header.extend(ks.iter().map(|k| format!("{}{}", prefix, k)));
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec = vec![
                r.label.clone(),
                r.branch.map(|b| b.to_string()).unwrap_or_default(),
            ];
            rec.extend(r.values.iter().map(|v| format!("{:.6}", v)));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.into_inner().map_err(|e| Error::Config(format!("csv: {}", e)))
    }

    /// Transferability pairs as CSV.
    pub fn pairs_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "source_task",
            "target_task",
            "source_row",
            "target_row",
            "similarity",
            "ari",
            "valid",
        ])
        .map_err(csv_err)?;
        for p in &self.pairs {
            w.write_record([
                p.source_task.to_string(),
                p.target_task.to_string(),
                p.source_row.to_string(),
                p.target_row.to_string(),
                format!("{:.6}", p.similarity),
                format!("{:.6}", p.ari),
                p.valid.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.into_inner().map_err(|e| Error::Config(format!("csv: {}", e)))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_json_bytes()?)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_csv_bytes()?)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Config(format!("csv: {}", e))
}
