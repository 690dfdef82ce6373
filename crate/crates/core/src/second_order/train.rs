use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{BranchGrads, SecondOrderParams};
use crate::error::{Error, Result};
use crate::forge::LrSchedule;
use crate::rng;
use crate::store::Checkpoint;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SecondOrderTrainConfig {
    pub lr: LrSchedule,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SecondOrderTrainConfig {
    fn default() -> Self {
        SecondOrderTrainConfig {
            lr: LrSchedule {
                initial: 0.01,
                decay_factor: 0.1,
                decay_epochs: vec![40, 80],
            },
            epochs: 100,
            batch_size: 1,
            seed: 0,
        }
    }
}

impl SecondOrderTrainConfig {
    /// Three times as many epochs with the decay milestones moved to 1.5x
    /// and 2.25x the original length (300 epochs, decays at 150 and 225 for
    /// the defaults). Used for branch ablations.
    pub fn extended(&self) -> Self {
        let e = self.epochs;
        SecondOrderTrainConfig {
            lr: LrSchedule {
                decay_epochs: vec![3 * e / 2, 9 * e / 4],
                ..self.lr.clone()
            },
            epochs: 3 * e,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.lr.validate(false)?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// A checkpoint paired with the class index it should be assigned.
pub type TrainSample<'a> = (&'a Checkpoint, usize);

impl SecondOrderParams {
    /// Plain SGD on the fused cross-entropy. Returns the mean loss of every epoch.
    ///
    /// A zero initial step size is accepted and leaves the parameters untouched.
    pub fn train(&mut self, data: &[TrainSample<'_>], config: &SecondOrderTrainConfig) -> Result<Vec<f64>> {
        config.lr.validate(true)?;
        if config.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if data.is_empty() {
            return Err(Error::Precondition("second-order training split is empty".into()));
        }
        if let Some(&(_, y)) = data.iter().find(|(_, y)| *y >= self.n_tasks) {
            return Err(Error::Precondition(format!(
                "label {} outside [0, {})",
                y, self.n_tasks
            )));
        }
        let mut r = rng::stream(config.seed, &[0x50C0]);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut curve = Vec::with_capacity(config.epochs);
        for epoch in 0..config.epochs {
            let lr = config.lr.at(epoch);
            order.shuffle(&mut r);
            let mut total = 0.0;
            for chunk in order.chunks(config.batch_size) {
                let mut acc: Vec<Option<BranchGrads>> = vec![None; self.branches.len()];
                for &i in chunk {
                    let (ck, y) = data[i];
                    let (loss, grads) = self.loss_and_grad(ck, y)?;
                    total += loss;
                    accumulate(&mut acc, grads);
                }
                self.step(&acc, lr / chunk.len() as f64);
            }
            let mean = total / data.len() as f64;
            if !mean.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            curve.push(mean);
        }
        Ok(curve)
    }

    fn step(&mut self, grads: &[Option<BranchGrads>], lr: f64) {
        if lr == 0.0 {
            return;
        }
        for (b, g) in self.branches.iter_mut().zip(grads) {
            let Some(g) = g else { continue };
            descend(b.weight.data_mut(), &g.weight, lr);
            descend(&mut b.bias, &g.bias, lr);
            if let (Some(phi), Some(gp)) = (b.phi.as_mut(), g.phi.as_ref()) {
                descend(phi.data_mut(), gp, lr);
            }
        }
    }
}

fn descend(p: &mut [f64], g: &[f64], lr: f64) {
    for (p, g) in p.iter_mut().zip(g) {
        *p -= lr * g;
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn accumulate(acc: &mut [Option<BranchGrads>], grads: Vec<Option<BranchGrads>>) {
    for (a, g) in acc.iter_mut().zip(grads) {
        let Some(g) = g else { continue };
        match a {
            None => *a = Some(g),
            Some(a) => {
                add_into(&mut a.weight, &g.weight);
                add_into(&mut a.bias, &g.bias);
                if let (Some(ap), Some(gp)) = (a.phi.as_mut(), g.phi.as_ref()) {
                    add_into(ap, gp);
                }
            }
        }
    }
}
