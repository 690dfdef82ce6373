//! The second-order network: one branch per conv layer of the first-order
//! architecture. A branch aligns the checkpoint's filters for that layer
//! against its own learnable filters `phi`, flattens the sorted score matrix
//! and feeds it to a dense classifier over task labels. Branch softmax
//! outputs are fused as a weighted average of probabilities, and the loss is
//! the cross-entropy of the fused distribution.

mod features;
mod io;
mod train;

pub use features::{cosine, Feature, Similarity};
pub use io::{load_params, save_params, SECOND_ORDER_KIND};
pub use train::{SecondOrderTrainConfig, TrainSample};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::align::{align_layer, backprop_scores, AlignOptions, BranchRepr};
use crate::error::{Error, Result};
use crate::rng;
use crate::store::Checkpoint;
use crate::tensor::{cross_entropy, dense, softmax, ArchDescriptor, Tensor};

/// What a branch sees of its checkpoint layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FrontEnd {
    /// The layer's filters flattened in stored order, no `phi`.
    RawWeights,
    /// Frobenius scoring against `phi`, with the given alignment steps.
    Frobenius { align: AlignOptions },
}

impl FrontEnd {
    pub const ALIGNED: FrontEnd = FrontEnd::Frobenius {
        align: AlignOptions::FULL,
    };
    pub const UNALIGNED: FrontEnd = FrontEnd::Frobenius {
        align: AlignOptions::NONE,
    };
}

/// Default width of a branch's second-order filter bank relative to the
/// layer it scores. A single bank of `g_l` filters underfits the task signal
/// in the small first layer.
pub const SECOND_FILTER_RATIO: usize = 4;

/// Shape of a second-order network, independent of its trained values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub front_end: FrontEnd,
    /// Fusion weights `w_l`, one per branch. `None` trains the first branch only.
    #[serde(default)]
    pub branch_weights: Option<Vec<f64>>,
    /// Number of second-order filters `g'_l` per branch. `None` uses
    /// `SECOND_FILTER_RATIO * g_l`.
    #[serde(default)]
    pub second_filters: Option<Vec<usize>>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            front_end: FrontEnd::ALIGNED,
            branch_weights: None,
            second_filters: None,
        }
    }
}

impl ModelConfig {
    pub fn with_front_end(front_end: FrontEnd) -> Self {
        ModelConfig {
            front_end,
            ..ModelConfig::default()
        }
    }

    /// Resolved fusion weights for an architecture with `n` conv layers.
    pub fn weights_for(&self, n: usize) -> Vec<f64> {
        match &self.branch_weights {
            Some(w) => w.clone(),
            None => one_hot_weights(n, 0),
        }
    }
}

/// `w_l = 1` for `branch`, zero elsewhere.
pub fn one_hot_weights(n: usize, branch: usize) -> Vec<f64> {
    (0..n).map(|l| if l == branch { 1.0 } else { 0.0 }).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    /// Second-order filters `(g', c, h, w)`; absent for raw-weight branches.
    pub phi: Option<Tensor>,
    /// Classifier `(n_tasks, input_len)`.
    pub weight: Tensor,
    pub bias: Vec<f64>,
}

impl Branch {
    pub fn input_len(&self) -> usize {
        self.weight.shape()[1]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SecondOrderParams {
    pub arch: ArchDescriptor,
    pub front_end: FrontEnd,
    pub n_tasks: usize,
    pub branch_weights: Vec<f64>,
    pub branches: Vec<Branch>,
}

/// One branch's share of a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchOutput {
    pub layer: usize,
    /// Present for Frobenius front ends.
    pub repr: Option<BranchRepr>,
    pub input: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardRecord {
    pub branches: Vec<BranchOutput>,
    /// `(1/W) Σ_l w_l q^l`.
    pub fused: Vec<f64>,
    /// Cross-entropy of `fused` against the label, when one was given.
    pub loss: Option<f64>,
}

/// Gradients of the loss, laid out like [`Branch`]. Branches with zero
/// fusion weight get `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchGrads {
    pub phi: Option<Vec<f64>>,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl SecondOrderParams {
    /// Gaussian initialization: `phi` with std `1/sqrt(c·h·w)`, classifier
    /// weights with std `1/sqrt(fan_in)`, zero bias.
    pub fn init(arch: &ArchDescriptor, n_tasks: usize, config: &ModelConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        if n_tasks < 2 {
            return Err(Error::Precondition(format!(
                "second-order classifier needs at least 2 tasks, got {}",
                n_tasks
            )));
        }
        let n = arch.convs.len();
        let second = match &config.second_filters {
            Some(g) if g.len() != n => {
                return Err(Error::Config(format!(
                    "{} second-order filter counts for {} branches",
                    g.len(),
                    n
                )))
            }
            Some(g) => g.clone(),
            None => arch.convs.iter().map(|c| SECOND_FILTER_RATIO * c.out_filters).collect(),
        };
        let mut r = rng::stream(seed, &[0x5EC0]);
        let mut branches = Vec::with_capacity(n);
        for (l, conv) in arch.convs.iter().enumerate() {
            let fs = conv.filter_shape();
            let (phi, input_len) = match config.front_end {
                FrontEnd::RawWeights => (None, fs.iter().product::<usize>()),
                FrontEnd::Frobenius { .. } => {
                    let fan = (fs[1] * fs[2] * fs[3]) as f64;
                    let shape = vec![second[l], fs[1], fs[2], fs[3]];
                    (Some(gaussian(shape, 1.0 / fan.sqrt(), &mut r)?), conv.out_filters * second[l])
                }
            };
            let weight = gaussian(vec![n_tasks, input_len], 1.0 / (input_len as f64).sqrt(), &mut r)?;
            branches.push(Branch {
                phi,
                weight,
                bias: vec![0.0; n_tasks],
            });
        }
        let params = SecondOrderParams {
            arch: arch.clone(),
            front_end: config.front_end,
            n_tasks,
            branch_weights: config.weights_for(n),
            branches,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let n = self.arch.convs.len();
        if self.branches.len() != n || self.branch_weights.len() != n {
            return Err(Error::ArchMismatch(format!(
                "{} branches and {} weights for {} conv layers",
                self.branches.len(),
                self.branch_weights.len(),
                n
            )));
        }
        if self.branch_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || self.total_weight() <= 0.0 {
            return Err(Error::Config(format!(
                "branch weights {:?} must be non-negative with a positive sum",
                self.branch_weights
            )));
        }
        for (l, (b, conv)) in self.branches.iter().zip(&self.arch.convs).enumerate() {
            let fs = conv.filter_shape();
            let expected_in = match (&self.front_end, &b.phi) {
                (FrontEnd::RawWeights, None) => fs.iter().product(),
                (FrontEnd::Frobenius { .. }, Some(phi)) => {
                    if phi.rank() != 4 || phi.shape()[1..] != fs[1..] {
                        return Err(Error::ArchMismatch(format!(
                            "branch {} phi {:?} does not match layer filters {:?}",
                            l,
                            phi.shape(),
                            fs
                        )));
                    }
                    conv.out_filters * phi.shape()[0]
                }
                _ => {
                    return Err(Error::ArchMismatch(format!(
                        "branch {} phi presence does not match the front end",
                        l
                    )))
                }
            };
            if b.weight.shape() != [self.n_tasks, expected_in] || b.bias.len() != self.n_tasks {
                return Err(Error::ArchMismatch(format!(
                    "branch {} classifier {:?} (+{} bias) but expected ({}, {})",
                    l,
                    b.weight.shape(),
                    b.bias.len(),
                    self.n_tasks,
                    expected_in
                )));
            }
        }
        Ok(())
    }

    pub fn num_branches(&self) -> usize {
        self.branches.len()
    }

    /// `W = Σ_l w_l`.
    pub fn total_weight(&self) -> f64 {
        self.branch_weights.iter().sum()
    }

    fn check_checkpoint(&self, ck: &Checkpoint) -> Result<()> {
        if ck.arch != self.arch {
            return Err(Error::ArchMismatch(format!(
                "checkpoint of task {} (seed {}) has a different architecture than the second-order network",
                ck.task_id, ck.seed
            )));
        }
        Ok(())
    }

    fn check_branch(&self, branch: usize) -> Result<()> {
        if branch >= self.branches.len() {
            return Err(Error::Precondition(format!(
                "branch {} out of range for {} branches",
                branch,
                self.branches.len()
            )));
        }
        Ok(())
    }

    /// Runs one branch on a checkpoint whose architecture was already checked.
    fn run_branch(&self, l: usize, ck: &Checkpoint) -> Result<BranchOutput> {
        let b = &self.branches[l];
        let theta = ck.conv_weight(l);
        let (repr, input) = match (&self.front_end, &b.phi) {
            (FrontEnd::Frobenius { align }, Some(phi)) => {
                let repr = align_layer(theta, phi, l, *align)?;
                let input = repr.values.clone();
                (Some(repr), input)
            }
            _ => (None, theta.data().to_vec()),
        };
        let logits = dense(&input, &b.weight, &b.bias)?;
        let probs = softmax(&logits);
        Ok(BranchOutput {
            layer: l,
            repr,
            input,
            logits,
            probs,
        })
    }

    /// Pre-softmax output of a single branch.
    pub fn branch_logits(&self, ck: &Checkpoint, branch: usize) -> Result<Vec<f64>> {
        self.check_checkpoint(ck)?;
        self.check_branch(branch)?;
        Ok(self.run_branch(branch, ck)?.logits)
    }

    /// Full forward pass over every branch. With a label, the fused
    /// cross-entropy is recorded as the loss.
    pub fn forward(&self, ck: &Checkpoint, label: Option<usize>) -> Result<ForwardRecord> {
        self.forward_with(ck, label, false)
    }

    fn forward_with(&self, ck: &Checkpoint, label: Option<usize>, active_only: bool) -> Result<ForwardRecord> {
        self.check_checkpoint(ck)?;
        if let Some(y) = label {
            if y >= self.n_tasks {
                return Err(Error::Precondition(format!(
                    "label {} outside [0, {})",
                    y, self.n_tasks
                )));
            }
        }
        let mut branches = Vec::with_capacity(self.branches.len());
        let mut acc = vec![0.0; self.n_tasks];
        for (l, &w) in self.branch_weights.iter().enumerate() {
            if active_only && w == 0.0 {
                continue;
            }
            let out = self.run_branch(l, ck)?;
            if w != 0.0 {
                for (a, q) in acc.iter_mut().zip(&out.probs) {
                    *a += w * q;
                }
            }
            branches.push(out);
        }
        let inv = 1.0 / self.total_weight();
        let fused: Vec<f64> = acc.iter().map(|a| a * inv).collect();
        let loss = match label {
            Some(y) => {
                if !(fused[y] > 0.0) {
                    return Err(Error::Contract(format!(
                        "fused probability of class {} underflowed to {}",
                        y, fused[y]
                    )));
                }
                let mut target = vec![0.0; self.n_tasks];
                target[y] = 1.0;
                Some(cross_entropy(&fused, &target)?)
            }
            None => None,
        };
        Ok(ForwardRecord {
            branches,
            fused,
            loss,
        })
    }

    /// Loss and gradients for one labelled checkpoint.
    ///
    /// With `s = Σ_k w_k q^k_y`, the gradient with respect to branch `l`'s
    /// logits is `(w_l q^l_y / s) (q^l − e_y)`.
    pub fn loss_and_grad(&self, ck: &Checkpoint, label: usize) -> Result<(f64, Vec<Option<BranchGrads>>)> {
        let rec = self.forward_with(ck, Some(label), true)?;
        let s: f64 = rec
            .branches
            .iter()
            .map(|b| self.branch_weights[b.layer] * b.probs[label])
            .sum();
        let mut grads: Vec<Option<BranchGrads>> = vec![None; self.branches.len()];
        for out in &rec.branches {
            let l = out.layer;
            let coef = self.branch_weights[l] * out.probs[label] / s;
            let mut g_logits: Vec<f64> = out.probs.iter().map(|q| coef * q).collect();
            g_logits[label] -= coef;
            let b = &self.branches[l];
            let inp = b.input_len();
            let w = b.weight.data();
            let mut g_weight = vec![0.0; w.len()];
            let mut g_input = vec![0.0; inp];
            for (o, &g) in g_logits.iter().enumerate() {
                let row = &w[o * inp..(o + 1) * inp];
                for i in 0..inp {
                    g_weight[o * inp + i] = g * out.input[i];
                    g_input[i] += g * row[i];
                }
            }
            let g_phi = match (&out.repr, &b.phi) {
                (Some(repr), Some(phi)) => {
                    Some(backprop_scores(repr, ck.conv_weight(l), phi, &g_input)?.into_data())
                }
                _ => None,
            };
            grads[l] = Some(BranchGrads {
                phi: g_phi,
                weight: g_weight,
                bias: g_logits,
            });
        }
        Ok((rec.loss.expect("label supplied"), grads))
    }
}

fn gaussian<R: Rng>(shape: Vec<usize>, std: f64, r: &mut R) -> Result<Tensor> {
    let normal = Normal::new(0.0, std).map_err(|e| Error::Config(format!("bad init std {}: {}", std, e)))?;
    Tensor::from_fn(shape, |_| normal.sample(r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forge::Network;

    fn checkpoint(seed: u64, task_id: usize) -> Checkpoint {
        let arch = ArchDescriptor::desk_default();
        let net = Network::init(&arch, &mut rng::stream(seed, &[1])).unwrap();
        Checkpoint {
            arch,
            tensors: net.named_tensors(),
            task_id,
            seed,
            train_accuracy: 1.0,
            config_hash: 0,
        }
    }

    fn params(front_end: FrontEnd, weights: Vec<f64>) -> SecondOrderParams {
        let cfg = ModelConfig {
            front_end,
            branch_weights: Some(weights),
            second_filters: None,
        };
        SecondOrderParams::init(&ArchDescriptor::desk_default(), 4, &cfg, 3).unwrap()
    }

    #[test]
    fn zero_classifier_gives_uniform_fused_probs() {
        let mut p = params(FrontEnd::ALIGNED, vec![1.0, 1.0, 1.0]);
        for b in &mut p.branches {
            b.weight = Tensor::zeros(b.weight.shape().to_vec()).unwrap();
            b.bias = vec![0.0; 4];
        }
        let rec = p.forward(&checkpoint(1, 0), Some(2)).unwrap();
        for q in &rec.fused {
            assert_eq!(*q, 0.25);
        }
        assert!((rec.loss.unwrap() - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn one_hot_weights_reproduce_branch_probs() {
        let p = params(FrontEnd::ALIGNED, vec![1.0, 0.0, 0.0]);
        let rec = p.forward(&checkpoint(1, 0), Some(1)).unwrap();
        assert_eq!(rec.fused, rec.branches[0].probs);
        let mut target = vec![0.0; 4];
        target[1] = 1.0;
        assert_eq!(rec.loss.unwrap(), cross_entropy(&rec.branches[0].probs, &target).unwrap());
    }

    #[test]
    fn probabilities_normalized() {
        let p = params(FrontEnd::ALIGNED, vec![0.5, 1.0, 2.0]);
        let rec = p.forward(&checkpoint(4, 0), None).unwrap();
        for b in &rec.branches {
            assert!((b.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!((rec.fused.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(rec.loss.is_none());
    }

    #[test]
    fn rejects_foreign_arch_and_bad_weights() {
        let p = params(FrontEnd::ALIGNED, vec![1.0, 0.0, 0.0]);
        let mut ck = checkpoint(1, 0);
        ck.arch.n_classes = 3;
        assert!(matches!(p.forward(&ck, None), Err(Error::ArchMismatch(_))));
        let cfg = ModelConfig {
            branch_weights: Some(vec![0.0, 0.0, 0.0]),
            ..ModelConfig::default()
        };
        assert!(SecondOrderParams::init(&ArchDescriptor::desk_default(), 4, &cfg, 0).is_err());
    }

    #[test]
    fn raw_front_end_has_no_phi() {
        let p = params(FrontEnd::RawWeights, vec![1.0, 0.0, 0.0]);
        assert!(p.branches.iter().all(|b| b.phi.is_none()));
        assert_eq!(p.branches[0].input_len(), 8 * 3 * 3 * 3);
        let (_, g) = p.loss_and_grad(&checkpoint(2, 0), 0).unwrap();
        assert!(g[0].as_ref().unwrap().phi.is_none());
        assert!(g[1].is_none());
    }

    #[test]
    fn second_filter_count_configurable() {
        let cfg = ModelConfig {
            second_filters: Some(vec![4, 5, 6]),
            ..ModelConfig::default()
        };
        let p = SecondOrderParams::init(&ArchDescriptor::desk_default(), 3, &cfg, 0).unwrap();
        assert_eq!(p.branches[2].phi.as_ref().unwrap().shape(), &[6, 8, 3, 3]);
        assert_eq!(p.branches[2].input_len(), 16 * 6);
        p.forward(&checkpoint(0, 0), Some(0)).unwrap();
    }
}
