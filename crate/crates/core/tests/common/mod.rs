#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use wsk::forge::{checkpoint_file, generate_task_suite, Network, TrainConfig};
use wsk::store::{Checkpoint, Manifest, ManifestRow, MANIFEST_SCHEMA_VERSION};
use wsk::{ArchDescriptor, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// An untrained checkpoint with Gaussian weights and a random bias.
pub fn random_checkpoint(arch: &ArchDescriptor, task_id: usize, seed: u64) -> Checkpoint {
    let mut r = rng(seed);
    let mut net = Network::init(arch, &mut r).unwrap();
    for b in &mut net.fc_bias {
        *b = r.random_range(-0.5..0.5);
    }
    Checkpoint {
        arch: arch.clone(),
        tensors: net.named_tensors(),
        task_id,
        seed,
        train_accuracy: 1.0,
        config_hash: 0,
    }
}

pub fn random_tensor(shape: Vec<usize>, r: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| r.random_range(-1.0..1.0)).unwrap()
}

/// A manifest describing `n_tasks * repeats` admitted rows, task-major.
pub fn manifest(n_tasks: usize, repeats: usize, arch: &ArchDescriptor) -> Manifest {
    let rows = (0..n_tasks)
        .flat_map(|t| {
            (0..repeats).map(move |j| ManifestRow {
                file: checkpoint_file(t, j),
                task_id: t,
                seed: j as u64,
                train_accuracy: 1.0,
                excluded: false,
                attempts: 1,
            })
        })
        .collect();
    Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        suite: generate_task_suite(n_tasks, 0).unwrap(),
        arch: arch.clone(),
        train_config: TrainConfig::default(),
        base_seed: 0,
        repeats,
        rows,
    }
}

/// Probe images in `[0,1]`, shape `(n,3,s,s)`.
pub fn probe(n: usize, s: usize, seed: u64) -> Tensor {
    let mut r = rng(seed);
    Tensor::from_fn(vec![n, 3, s, s], |_| r.random::<f64>()).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// A three-layer chain small enough to finite-difference every parameter.
pub fn tiny_arch() -> ArchDescriptor {
    let conv = |i, o, k| wsk::ConvSpec {
        in_channels: i,
        out_filters: o,
        kernel_h: k,
        kernel_w: k,
        stride: 1,
        padding: 1,
        relu: true,
    };
    ArchDescriptor {
        convs: vec![conv(3, 3, 3), conv(3, 3, 2), conv(3, 4, 2)],
        n_classes: 2,
    }
}

pub struct GradCheck {
    pub instances: usize,
    pub skipped: usize,
    pub parameters: usize,
    pub max_rel_err: f64,
}

/// Finite-difference step for the second-order loss.
pub const SO_STEP: f64 = 1e-6;

/// Compares the analytic gradient of the fused loss with central differences
/// over every phi, classifier weight and bias entry, on `instances` random
/// checkpoints, parameter draws and branch weightings whose alignment
/// decisions are at least a safe margin from a tie.
pub fn second_order_grad_check(instances: usize, seed: u64) -> GradCheck {
    use wsk::second_order::{FrontEnd, ModelConfig, SecondOrderParams};

    let arch = tiny_arch();
    let mut r = rng(seed);
    let mut out = GradCheck { instances: 0, skipped: 0, parameters: 0, max_rel_err: 0.0 };
    while out.instances < instances {
        let ck = random_checkpoint(&arch, 0, r.random());
        let n_tasks = r.random_range(2..5);
        let mut weights: Vec<f64> = (0..3).map(|_| r.random_range(0.0..1.0)).collect();
        if r.random::<bool>() {
            weights[r.random_range(0..3)] = 0.0;
        }
        let align = wsk::align::AlignOptions { filter_align: r.random(), channel_align: r.random() };
        let config = ModelConfig {
            front_end: FrontEnd::Frobenius { align },
            branch_weights: Some(weights),
            second_filters: Some(vec![r.random_range(1..4), r.random_range(1..4), r.random_range(1..4)]),
        };
        let mut params = SecondOrderParams::init(&arch, n_tasks, &config, r.random()).unwrap();
        for b in &mut params.branches {
            for v in b.weight.data_mut().iter_mut().chain(b.bias.iter_mut()) {
                *v = r.random_range(-1.0..1.0);
            }
        }
        let guard = (0..3).all(|l| {
            let theta = ck.conv_weight(l);
            let bound = theta.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let phi = params.branches[l].phi.as_ref().unwrap();
            wsk::align::tie_margin(theta, phi, l, align).unwrap() > (1e-8f64).max(4.0 * SO_STEP * bound)
        });
        if !guard {
            out.skipped += 1;
            continue;
        }
        let y = r.random_range(0..n_tasks);
        let (_, grads) = params.loss_and_grad(&ck, y).unwrap();
        let loss = |p: &SecondOrderParams| p.forward(&ck, Some(y)).unwrap().loss.unwrap();
        for l in 0..3 {
            let zero = vec![0.0; params.branches[l].phi.as_ref().unwrap().len()];
            let g = grads[l].clone();
            let (g_phi, g_w, g_b) = match &g {
                Some(g) => (g.phi.clone().unwrap(), g.weight.clone(), g.bias.clone()),
                None => (zero, vec![0.0; params.branches[l].weight.len()], vec![0.0; n_tasks]),
            };
            for (slot, analytic) in [(0usize, g_phi), (1, g_w), (2, g_b)] {
                for (i, &a) in analytic.iter().enumerate() {
                    let mut probe = params.clone();
                    let value = |p: &mut SecondOrderParams, delta: f64| {
                        let b = &mut p.branches[l];
                        let v = match slot {
                            0 => &mut b.phi.as_mut().unwrap().data_mut()[i],
                            1 => &mut b.weight.data_mut()[i],
                            _ => &mut b.bias[i],
                        };
                        *v += delta;
                    };
                    value(&mut probe, SO_STEP);
                    let hi = loss(&probe);
                    value(&mut probe, -2.0 * SO_STEP);
                    let lo = loss(&probe);
                    let fd = (hi - lo) / (2.0 * SO_STEP);
                    out.max_rel_err = out.max_rel_err.max(rel_err(fd, a));
                    out.parameters += 1;
                }
            }
        }
        out.instances += 1;
    }
    out
}
