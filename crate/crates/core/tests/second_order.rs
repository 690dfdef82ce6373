mod common;

use proptest::prelude::*;
use rand::Rng;

use common::{random_checkpoint, rng, second_order_grad_check, tiny_arch};
use wsk::align::{permute_checkpoint, random_permutations};
use wsk::second_order::{
    load_params, one_hot_weights, save_params, FrontEnd, ModelConfig, SecondOrderParams,
    SecondOrderTrainConfig, TrainSample,
};
use wsk::store::Checkpoint;

#[test]
fn fused_loss_gradient_matches_central_differences() {
    let report = second_order_grad_check(50, 21);
    assert!(report.max_rel_err <= 1e-4, "max relative error {}", report.max_rel_err);
    assert!(report.parameters > 1000);
}

fn two_branch_params(weights: Vec<f64>) -> (SecondOrderParams, Checkpoint) {
    let mut arch = tiny_arch();
    arch.convs.truncate(2);
    let config = ModelConfig {
        branch_weights: Some(weights),
        ..ModelConfig::default()
    };
    let mut p = SecondOrderParams::init(&arch, 2, &config, 0).unwrap();
    for b in &mut p.branches {
        b.weight.data_mut().fill(0.0);
    }
    (p, random_checkpoint(&arch, 0, 1))
}

#[test]
fn equal_weights_over_opposed_branches_give_ln_two() {
    // branch 1 is certain of class 0, branch 2 of class 1
    let (mut p, ck) = two_branch_params(vec![1.0, 1.0]);
    p.branches[0].bias = vec![50.0, -50.0];
    p.branches[1].bias = vec![-50.0, 50.0];
    let rec = p.forward(&ck, Some(0)).unwrap();
    assert!((rec.loss.unwrap() - 2f64.ln()).abs() < 1e-12);
}

#[test]
fn one_hot_weights_select_a_branch() {
    let (mut p, ck) = two_branch_params(one_hot_weights(2, 1));
    p.branches[1].bias = vec![0.3, -0.2];
    let rec = p.forward(&ck, Some(1)).unwrap();
    assert_eq!(rec.fused, rec.branches[1].probs);
    let q = &rec.branches[1].probs;
    assert_eq!(rec.loss.unwrap(), -q[1].ln());
}

#[test]
fn training_reduces_loss_and_is_deterministic() {
    let arch = tiny_arch();
    let cks: Vec<Checkpoint> = (0..12).map(|i| random_checkpoint(&arch, i % 3, 40 + i as u64)).collect();
    let data: Vec<TrainSample> = cks.iter().map(|c| (c, c.task_id)).collect();
    let cfg = SecondOrderTrainConfig { epochs: 40, ..SecondOrderTrainConfig::default() };
    let run = || {
        let mut p = SecondOrderParams::init(&arch, 3, &ModelConfig::default(), 5).unwrap();
        let curve = p.train(&data, &cfg).unwrap();
        (p, curve)
    };
    let (p, curve) = run();
    assert_eq!(run(), (p, curve.clone()));
    assert!(curve.last().unwrap() < &curve[0]);
    for w in curve.windows(11) {
        assert!(w[10] <= w[0], "loss rose over a 10-epoch window: {:?}", w);
    }
}

#[test]
fn zero_step_size_leaves_parameters_unchanged() {
    let arch = tiny_arch();
    let cks: Vec<Checkpoint> = (0..4).map(|i| random_checkpoint(&arch, i % 2, i as u64)).collect();
    let data: Vec<TrainSample> = cks.iter().map(|c| (c, c.task_id)).collect();
    let mut cfg = SecondOrderTrainConfig { epochs: 2, ..SecondOrderTrainConfig::default() };
    cfg.lr.initial = 0.0;
    let mut p = SecondOrderParams::init(&arch, 2, &ModelConfig::default(), 1).unwrap();
    let before = p.clone();
    p.train(&data, &cfg).unwrap();
    assert_eq!(p, before);
}

#[test]
fn labels_out_of_range_are_rejected() {
    let arch = tiny_arch();
    let ck = random_checkpoint(&arch, 0, 0);
    let mut p = SecondOrderParams::init(&arch, 2, &ModelConfig::default(), 1).unwrap();
    assert!(p.train(&[(&ck, 2)], &SecondOrderTrainConfig::default()).is_err());
    assert!(p.train(&[], &SecondOrderTrainConfig::default()).is_err());
}

#[test]
fn aligned_features_ignore_compensated_permutations() {
    let arch = wsk::ArchDescriptor::desk_default();
    let p = SecondOrderParams::init(&arch, 4, &ModelConfig::default(), 3).unwrap();
    let mut r = rng(2);
    for k in 0..10 {
        let ck = random_checkpoint(&arch, 0, k);
        let perms = random_permutations(&ck, &mut r);
        let moved = permute_checkpoint(&ck, &perms, true).unwrap();
        for branch in 0..3 {
            let s = p.similarity(&ck, &moved, branch).unwrap();
            assert!((s.cosine - 1.0).abs() < 1e-12);
            assert_eq!(
                p.extract_features(&ck, branch).unwrap(),
                p.extract_features(&moved, branch).unwrap()
            );
        }
    }
}

#[test]
fn unaligned_features_see_permutations() {
    let arch = wsk::ArchDescriptor::desk_default();
    let p = SecondOrderParams::init(&arch, 4, &ModelConfig::with_front_end(FrontEnd::UNALIGNED), 3).unwrap();
    let ck = random_checkpoint(&arch, 0, 9);
    let moved = permute_checkpoint(&ck, &random_permutations(&ck, &mut rng(1)), true).unwrap();
    assert_ne!(p.branch_logits(&ck, 1).unwrap(), p.branch_logits(&moved, 1).unwrap());
}

#[test]
fn saved_params_reload_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("so.wsk");
    for front_end in [FrontEnd::ALIGNED, FrontEnd::UNALIGNED, FrontEnd::RawWeights] {
        let p = SecondOrderParams::init(&tiny_arch(), 3, &ModelConfig::with_front_end(front_end), 7).unwrap();
        save_params(&p, &path).unwrap();
        assert_eq!(load_params(&path).unwrap(), p);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fused_probabilities_are_normalized(seed in any::<u64>(), n_tasks in 2usize..8) {
        let arch = tiny_arch();
        let mut r = rng(seed);
        let weights: Vec<f64> = (0..3).map(|_| r.random_range(0.01..2.0)).collect();
        let config = ModelConfig { branch_weights: Some(weights), ..ModelConfig::default() };
        let mut p = SecondOrderParams::init(&arch, n_tasks, &config, seed).unwrap();
        for b in &mut p.branches {
            for v in b.bias.iter_mut() {
                *v = r.random_range(-5.0..5.0);
            }
        }
        let rec = p.forward(&random_checkpoint(&arch, 0, seed), None).unwrap();
        prop_assert!((rec.fused.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        for b in &rec.branches {
            prop_assert!((b.probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }
}
