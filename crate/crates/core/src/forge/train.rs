//! First-order SGD training and modelset construction.

use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::network::{Gradients, Network, Trace};
use super::task::{sample_batch, Batch, TaskSpec};
use crate::error::{Error, Result};
use crate::rng;
use crate::store::{save_checkpoint, Checkpoint, Manifest, ManifestRow, ModelSet, MANIFEST_SCHEMA_VERSION};
use crate::tensor::ArchDescriptor;

/// Step-decay learning-rate schedule: `lr0 * factor^k` after the k-th milestone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay_factor: f64,
    pub decay_epochs: Vec<usize>,
}

impl LrSchedule {
    pub fn at(&self, epoch: usize) -> f64 {
        let k = self.decay_epochs.iter().filter(|&&e| epoch >= e).count();
        self.initial * self.decay_factor.powi(k as i32)
    }

    pub fn validate(&self, allow_zero: bool) -> Result<()> {
        let lr_ok = if allow_zero {
            self.initial >= 0.0
        } else {
            self.initial > 0.0
        };
        if !lr_ok || !self.initial.is_finite() {
            return Err(Error::Config(format!(
                "initial step size {} must be positive",
                self.initial
            )));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config(format!(
                "decay factor {} outside (0,1]",
                self.decay_factor
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: LrSchedule,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub samples_per_class: usize,
    /// Seed of the task's training images; shared by every repeat so repeats
    /// differ only in initialization and sample order.
    pub data_seed: u64,
    /// Minimum final train accuracy a checkpoint needs to enter a modelset.
    pub admission_accuracy: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: LrSchedule {
                initial: 0.05,
                decay_factor: 0.1,
                decay_epochs: vec![15, 25],
            },
            epochs: 30,
            batch_size: 8,
            momentum: 0.9,
            weight_decay: 1e-4,
            samples_per_class: 64,
            data_seed: 0,
            admission_accuracy: 0.9,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // A zero step size is legal: it leaves the initialization untouched.
        self.lr.validate(true)?;
        if self.batch_size == 0 || self.samples_per_class == 0 {
            return Err(Error::Config(
                "batch size and samples per class must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Config(
                "momentum must lie in [0,1) and weight decay be >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Stable 64-bit digest of the configuration and architecture.
    pub fn hash_with(&self, arch: &ArchDescriptor) -> u64 {
        let bytes = serde_json::to_vec(&(self, arch)).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}

/// Training images for a task under `config`.
pub fn training_batch(task: &TaskSpec, config: &TrainConfig) -> Result<Batch> {
    sample_batch(task, 2 * config.samples_per_class, config.data_seed)
}

/// Trains a first-order network on `task` with SGD, momentum and weight decay.
///
/// The seed selects the initialization and the per-epoch sample order; it is
/// mixed with the task id so equal seeds on different tasks start differently.
pub fn train_first_order(
    task: &TaskSpec,
    arch: &ArchDescriptor,
    config: &TrainConfig,
    seed: u64,
) -> Result<Checkpoint> {
    let data = training_batch(task, config)?;
    train_on_batch(task.task_id, &data, arch, config, seed)
}

pub(crate) fn train_on_batch(
    task_id: usize,
    data: &Batch,
    arch: &ArchDescriptor,
    config: &TrainConfig,
    seed: u64,
) -> Result<Checkpoint> {
    config.validate()?;
    arch.validate()?;
    if arch.convs[0].in_channels != 3 || arch.n_classes != 2 {
        return Err(Error::ArchMismatch(
            "first-order tasks need 3 input channels and 2 output classes".into(),
        ));
    }
    let mut rng = rng::stream(seed, &[0xF1F0, task_id as u64]);
    let mut net = Network::init(arch, &mut rng)?;
    let size = data.images.shape()[2];
    let dims = net.dims(size)?;
    let mut grads = Gradients::zeros_like(&net);
    let mut velocity = Gradients::zeros_like(&net);
    let mut trace = Trace::default();
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..config.epochs {
        let lr = config.lr.at(epoch);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            grads.clear();
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let img = data.image(i);
                net.forward(&dims, img, &mut trace);
                let y = data.labels[i];
                epoch_loss -= trace.probs[y].ln();
                let mut g = trace.probs.clone();
                g[y] -= 1.0;
                for v in &mut g {
                    *v *= scale;
                }
                net.backward(&dims, &trace, &g, &mut grads);
            }
            sgd_step(&mut net, &grads, &mut velocity, lr, config);
        }
        if !epoch_loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
    }
    if net.convs.iter().any(|t| t.data().iter().any(|v| !v.is_finite())) {
        return Err(Error::TrainingDiverged {
            epoch: config.epochs.saturating_sub(1),
        });
    }
    let train_accuracy = net.accuracy(&data.images, &data.labels)?;
    Ok(Checkpoint {
        arch: arch.clone(),
        tensors: net.named_tensors(),
        task_id,
        seed,
        train_accuracy,
        config_hash: config.hash_with(arch),
    })
}

fn sgd_step(net: &mut Network, grads: &Gradients, vel: &mut Gradients, lr: f64, cfg: &TrainConfig) {
    let update = |param: &mut [f64], grad: &[f64], v: &mut [f64]| {
        for ((p, g), v) in param.iter_mut().zip(grad).zip(v.iter_mut()) {
            let d = g + cfg.weight_decay * *p;
            *v = cfg.momentum * *v + d;
            *p -= lr * *v;
        }
    };
    for ((t, g), v) in net.convs.iter_mut().zip(&grads.convs).zip(&mut vel.convs) {
        update(t.data_mut(), g, v);
    }
    update(net.fc_weight.data_mut(), &grads.fc_weight, &mut vel.fc_weight);
    update(&mut net.fc_bias, &grads.fc_bias, &mut vel.fc_bias);
}

/// Attempts per slot: the original run plus up to three retries with fresh seeds.
pub const MAX_ATTEMPTS: usize = 4;

/// Seed of retry `attempt` for slot `slot`; attempt 0 is `base_seed + slot`.
pub fn slot_seed(base_seed: u64, repeats: usize, slot: usize, attempt: usize) -> u64 {
    base_seed
        .wrapping_add(slot as u64)
        .wrapping_add((attempt * repeats) as u64)
}

/// Checkpoint file of a slot, relative to the modelset root.
pub fn checkpoint_file(task_id: usize, slot: usize) -> String {
    format!("checkpoints/task{:03}_rep{:03}.wsk", task_id, slot)
}

struct SlotResult {
    checkpoint: Checkpoint,
    attempts: usize,
    admitted: bool,
}

fn train_slot(
    task: &TaskSpec,
    data: &Batch,
    arch: &ArchDescriptor,
    config: &TrainConfig,
    base_seed: u64,
    repeats: usize,
    slot: usize,
) -> Result<SlotResult> {
    let mut last = None;
    for attempt in 0..MAX_ATTEMPTS {
        let seed = slot_seed(base_seed, repeats, slot, attempt);
        match train_on_batch(task.task_id, data, arch, config, seed) {
            Ok(ck) if ck.train_accuracy >= config.admission_accuracy => {
                return Ok(SlotResult {
                    checkpoint: ck,
                    attempts: attempt + 1,
                    admitted: true,
                })
            }
            Ok(ck) => {
                log::warn!(
                    "task {} slot {} attempt {}: accuracy {:.3} below gate",
                    task.task_id,
                    slot,
                    attempt,
                    ck.train_accuracy
                );
                last = Some(ck);
            }
            Err(Error::TrainingDiverged { epoch }) => {
                log::warn!(
                    "task {} slot {} attempt {} diverged at epoch {}",
                    task.task_id,
                    slot,
                    attempt,
                    epoch
                );
            }
            Err(e) => return Err(e),
        }
    }
    match last {
        Some(checkpoint) => Ok(SlotResult {
            checkpoint,
            attempts: MAX_ATTEMPTS,
            admitted: false,
        }),
        None => Err(Error::ModelSetBuild {
            task_id: task.task_id,
            reason: format!("slot {} diverged on all {} attempts", slot, MAX_ATTEMPTS),
        }),
    }
}

/// Trains `repeats` checkpoints per task and writes them plus a manifest under `root`.
///
/// `jobs` bounds concurrent trainings; the output is byte-identical for any
/// value because every slot is independent and rows are assembled in order.
pub fn build_modelset(
    root: &Path,
    suite: &[TaskSpec],
    repeats: usize,
    arch: &ArchDescriptor,
    config: &TrainConfig,
    base_seed: u64,
    jobs: usize,
) -> Result<ModelSet> {
    if repeats < 2 {
        return Err(Error::Precondition(format!(
            "repeats must be >= 2 so intra-task pairs exist, got {}",
            repeats
        )));
    }
    if suite.is_empty() {
        return Err(Error::Precondition("empty task suite".into()));
    }
    config.validate()?;
    arch.validate()?;
    for (i, t) in suite.iter().enumerate() {
        t.validate()?;
        if t.task_id != i {
            return Err(Error::Precondition(format!(
                "suite position {} holds task id {}",
                i, t.task_id
            )));
        }
    }
    let datasets = suite
        .iter()
        .map(|t| training_batch(t, config))
        .collect::<Result<Vec<_>>>()?;
    let slots: Vec<(usize, usize)> = (0..suite.len())
        .flat_map(|t| (0..repeats).map(move |r| (t, r)))
        .collect();
    let run = |&(t, r): &(usize, usize)| -> Result<SlotResult> {
        let res = train_slot(&suite[t], &datasets[t], arch, config, base_seed, repeats, r)?;
        log::info!(
            "task {:>3} rep {:>3}: acc {:.3} ({} attempt(s){})",
            t,
            r,
            res.checkpoint.train_accuracy,
            res.attempts,
            if res.admitted { "" } else { ", excluded" }
        );
        save_checkpoint(&res.checkpoint, &root.join(checkpoint_file(t, r)))?;
        Ok(res)
    };
    let results: Vec<Result<SlotResult>> = if jobs <= 1 {
        slots.iter().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {}", e)))?;
        pool.install(|| slots.par_iter().map(run).collect())
    };
    let mut rows = Vec::with_capacity(slots.len());
    for (&(t, r), res) in slots.iter().zip(results) {
        let res = res?;
        rows.push(ManifestRow {
            file: checkpoint_file(t, r),
            task_id: t,
            seed: res.checkpoint.seed,
            train_accuracy: res.checkpoint.train_accuracy,
            excluded: !res.admitted,
            attempts: res.attempts,
        });
    }
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        suite: suite.to_vec(),
        arch: arch.clone(),
        train_config: config.clone(),
        base_seed,
        repeats,
        rows,
    };
    for t in suite {
        let admitted = manifest
            .rows
            .iter()
            .filter(|r| r.task_id == t.task_id && !r.excluded)
            .count();
        if admitted < 2 {
            return Err(Error::ModelSetBuild {
                task_id: t.task_id,
                reason: format!(
                    "only {} of {} slots passed the {:.2} accuracy gate within {} attempts",
                    admitted, repeats, config.admission_accuracy, MAX_ATTEMPTS
                ),
            });
        }
    }
    let ms = ModelSet {
        root: root.to_path_buf(),
        manifest,
    };
    ms.save_manifest()?;
    Ok(ms)
}
