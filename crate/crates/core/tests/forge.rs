mod common;

use rand::Rng;

use common::{probe, rng, tiny_arch};
use wsk::forge::{
    build_modelset, catalog, generate_task_suite, sample_batch, train_first_order, Gradients, Network, TaskSpec,
    Trace, TrainConfig, DEFAULT_IMAGE_SIZE,
};
use wsk::store::ModelSet;
use wsk::{ArchDescriptor, ConvSpec};

fn quick_config() -> TrainConfig {
    TrainConfig {
        epochs: 3,
        samples_per_class: 8,
        admission_accuracy: 0.0,
        ..TrainConfig::default()
    }
}

/// Relative error with the denominator floored at 1e-4: the loss is O(1), so
/// central differences carry ~1e-10 of rounding noise regardless of how small
/// the true derivative is.
fn fd_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

#[test]
fn network_gradients_match_central_differences() {
    let arch = tiny_arch();
    let mut r = rng(3);
    let images = probe(3, 6, 1);
    for case in 0..5 {
        let net = Network::init(&arch, &mut r).unwrap();
        let dims = net.dims(6).unwrap();
        let i = case % 3;
        let img = images.slice0(i);
        let y = r.random_range(0..2);
        let mut trace = Trace::default();
        net.forward(&dims, img, &mut trace);
        let mut g = trace.probs.clone();
        g[y] -= 1.0;
        let mut grads = Gradients::zeros_like(&net);
        net.backward(&dims, &trace, &g, &mut grads);
        let loss = |n: &Network| {
            let mut t = Trace::default();
            n.forward(&dims, img, &mut t);
            -t.probs[y].ln()
        };
        let h = 1e-6;
        for l in 0..net.convs.len() {
            for k in 0..net.convs[l].len() {
                let mut p = net.clone();
                p.convs[l].data_mut()[k] += h;
                let hi = loss(&p);
                p.convs[l].data_mut()[k] -= 2.0 * h;
                let lo = loss(&p);
                let fd = (hi - lo) / (2.0 * h);
                assert!(fd_err(fd, grads.convs[l][k]) <= 1e-5, "conv {} [{}]: {} vs {}", l, k, fd, grads.convs[l][k]);
            }
        }
        for k in 0..net.fc_weight.len() {
            let mut p = net.clone();
            p.fc_weight.data_mut()[k] += h;
            let hi = loss(&p);
            p.fc_weight.data_mut()[k] -= 2.0 * h;
            let fd = (hi - loss(&p)) / (2.0 * h);
            assert!(fd_err(fd, grads.fc_weight[k]) <= 1e-5);
        }
    }
}

#[test]
fn zero_step_size_returns_the_initialization() {
    let task = &generate_task_suite(2, 0).unwrap()[0];
    let mut cfg = quick_config();
    cfg.epochs = 1;
    cfg.lr.initial = 0.0;
    let ck = train_first_order(task, &ArchDescriptor::desk_default(), &cfg, 4).unwrap();
    cfg.epochs = 0;
    let init = train_first_order(task, &ArchDescriptor::desk_default(), &cfg, 4).unwrap();
    assert_eq!(ck.tensors, init.tensors);
}

#[test]
fn training_is_deterministic_and_seed_sensitive() {
    let task = &generate_task_suite(3, 1).unwrap()[2];
    let arch = ArchDescriptor::desk_default();
    let a = train_first_order(task, &arch, &quick_config(), 10).unwrap();
    let b = train_first_order(task, &arch, &quick_config(), 10).unwrap();
    let c = train_first_order(task, &arch, &quick_config(), 11).unwrap();
    assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
    assert!(a.conv_weight(0).max_abs_diff(c.conv_weight(0)).unwrap() > 0.0);
}

#[test]
fn stripes_versus_checkerboard_is_learnable() {
    let family = |name: &str| catalog().into_iter().find(|f| f.name == name).unwrap();
    let task = TaskSpec {
        task_id: 0,
        class_a: family("stripes-horizontal-gray"),
        class_b: family("checkerboard-gray"),
        noise_std: 0.05,
        image_size: DEFAULT_IMAGE_SIZE,
    };
    let conv = |i, o| ConvSpec { in_channels: i, out_filters: o, kernel_h: 3, kernel_w: 3, stride: 1, padding: 1, relu: true };
    let arch = ArchDescriptor { convs: vec![conv(3, 8), conv(8, 8)], n_classes: 2 };
    let cfg = TrainConfig { samples_per_class: 50, ..TrainConfig::default() };
    let ck = train_first_order(&task, &arch, &cfg, 0).unwrap();
    let held_out = sample_batch(&task, 100, cfg.data_seed + 1).unwrap();
    let acc = Network::from_checkpoint(&ck).unwrap().accuracy(&held_out.images, &held_out.labels).unwrap();
    assert!(acc > 0.9, "held-out accuracy {}", acc);
}

#[test]
fn modelset_build_is_reproducible_across_job_counts() {
    let suite = generate_task_suite(2, 5).unwrap();
    let arch = ArchDescriptor::desk_default();
    let dirs: Vec<_> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for (jobs, d) in [1, 2].into_iter().zip(&dirs) {
        build_modelset(d.path(), &suite, 2, &arch, &quick_config(), 9, jobs).unwrap();
    }
    let a = ModelSet::open(dirs[0].path()).unwrap();
    let b = ModelSet::open(dirs[1].path()).unwrap();
    assert_eq!(a.manifest, b.manifest);
    assert_eq!(a.manifest.rows.len(), 4);
    for t in 0..2 {
        assert_eq!(a.manifest.rows.iter().filter(|r| r.task_id == t).count(), 2);
    }
    for i in 0..4 {
        let fa = std::fs::read(a.checkpoint_path(i)).unwrap();
        assert_eq!(fa, std::fs::read(b.checkpoint_path(i)).unwrap());
    }
    let w0 = a.load(0).unwrap();
    let w1 = a.load(1).unwrap();
    assert!(w0.conv_weight(0).max_abs_diff(w1.conv_weight(0)).unwrap() > 1e-6);
    a.verify().unwrap();
}

#[test]
fn builds_reject_too_few_repeats() {
    let suite = generate_task_suite(2, 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    assert!(build_modelset(dir.path(), &suite, 1, &ArchDescriptor::desk_default(), &quick_config(), 0, 1).is_err());
}
