//! Deterministic train/test splits for the classification and retrieval protocols.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::modelset::Manifest;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    Classification,
    Retrieval,
}

/// Fraction of each task's checkpoints used for training in classification.
pub const CLASSIFICATION_TRAIN_FRACTION: f64 = 0.8;
/// Fraction of tasks used for training in retrieval.
pub const RETRIEVAL_TRAIN_TASK_FRACTION: f64 = 0.75;
/// Query checkpoints drawn per retrieval test task.
pub const QUERIES_PER_TASK: usize = 2;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSplit {
    pub task_id: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalTask {
    pub task_id: usize,
    pub queries: Vec<usize>,
    pub gallery: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum SplitPlan {
    Classification {
        seed: u64,
        tasks: Vec<TaskSplit>,
    },
    Retrieval {
        seed: u64,
        train_tasks: Vec<usize>,
        test_tasks: Vec<usize>,
        /// Every admitted checkpoint of every training task.
        train: Vec<usize>,
        test: Vec<RetrievalTask>,
    },
}

impl SplitPlan {
    pub fn mode(&self) -> SplitMode {
        match self {
            SplitPlan::Classification { .. } => SplitMode::Classification,
            SplitPlan::Retrieval { .. } => SplitMode::Retrieval,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            SplitPlan::Classification { seed, .. } | SplitPlan::Retrieval { seed, .. } => *seed,
        }
    }

    /// Manifest rows used to train the second-order network.
    pub fn train_rows(&self) -> Vec<usize> {
        match self {
            SplitPlan::Classification { tasks, .. } => {
                tasks.iter().flat_map(|t| t.train.iter().copied()).collect()
            }
            SplitPlan::Retrieval { train, .. } => train.clone(),
        }
    }

    /// Held-out rows: classification test rows, or retrieval queries then gallery.
    pub fn test_rows(&self) -> Vec<usize> {
        match self {
            SplitPlan::Classification { tasks, .. } => {
                tasks.iter().flat_map(|t| t.test.iter().copied()).collect()
            }
            SplitPlan::Retrieval { test, .. } => test
                .iter()
                .flat_map(|t| t.queries.iter().chain(&t.gallery).copied())
                .collect(),
        }
    }
}

/// Builds a split over the manifest's admitted rows.
pub fn make_split(manifest: &Manifest, mode: SplitMode, seed: u64) -> Result<SplitPlan> {
    let by_task = manifest.admitted_by_task();
    match mode {
        SplitMode::Classification => {
            let mut tasks = Vec::with_capacity(by_task.len());
            for (&task_id, rows) in &by_task {
                let m = rows.len();
                if m < 3 {
                    return Err(Error::Split(format!(
                        "classification needs >= 3 checkpoints per task, task {} has {}",
                        task_id, m
                    )));
                }
                let n_train = ((CLASSIFICATION_TRAIN_FRACTION * m as f64).ceil() as usize).min(m - 1);
                let mut shuffled = rows.clone();
                shuffled.shuffle(&mut rng::stream(seed, &[0xC1A5, task_id as u64]));
                let (train, test) = shuffled.split_at(n_train);
                let (mut train, mut test) = (train.to_vec(), test.to_vec());
                train.sort_unstable();
                test.sort_unstable();
                tasks.push(TaskSplit {
                    task_id,
                    train,
                    test,
                });
            }
            Ok(SplitPlan::Classification { seed, tasks })
        }
        SplitMode::Retrieval => {
            let n = by_task.len();
            if n < 4 {
                return Err(Error::Split(format!(
                    "retrieval needs >= 4 tasks, modelset has {}",
                    n
                )));
            }
            let mut task_ids: Vec<usize> = by_task.keys().copied().collect();
            task_ids.shuffle(&mut rng::stream(seed, &[0x2E72]));
            let n_train = ((RETRIEVAL_TRAIN_TASK_FRACTION * n as f64).ceil() as usize).min(n - 2);
            let mut train_tasks = task_ids[..n_train].to_vec();
            let mut test_tasks = task_ids[n_train..].to_vec();
            train_tasks.sort_unstable();
            test_tasks.sort_unstable();
            let train: Vec<usize> = train_tasks
                .iter()
                .flat_map(|t| by_task[t].iter().copied())
                .collect();
            let mut test = Vec::with_capacity(test_tasks.len());
            for &task_id in &test_tasks {
                let rows = &by_task[&task_id];
                if rows.len() < QUERIES_PER_TASK + 1 {
                    return Err(Error::Split(format!(
                        "retrieval test task {} has {} checkpoints, needs {}",
                        task_id,
                        rows.len(),
                        QUERIES_PER_TASK + 1
                    )));
                }
                let mut shuffled = rows.clone();
                shuffled.shuffle(&mut rng::stream(seed, &[0x9E41, task_id as u64]));
                let mut queries = shuffled[..QUERIES_PER_TASK].to_vec();
                let mut gallery = shuffled[QUERIES_PER_TASK..].to_vec();
                queries.sort_unstable();
                gallery.sort_unstable();
                test.push(RetrievalTask {
                    task_id,
                    queries,
                    gallery,
                });
            }
            Ok(SplitPlan::Retrieval {
                seed,
                train_tasks,
                test_tasks,
                train,
                test,
            })
        }
    }
}
