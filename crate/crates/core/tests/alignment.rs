mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

use common::{probe, random_checkpoint, random_tensor, rel_err, rng};
use wsk::align::{
    align_layer, backprop_scores, canonicalize, check_order_chain, order_chain_deviation, random_permutations,
    score_layer, tie_margin, AlignOptions,
};
use wsk::{ArchDescriptor, Tensor};

fn phi_for(theta: &Tensor, second: usize, r: &mut impl Rng) -> Tensor {
    let s = theta.shape();
    random_tensor(vec![second, s[1], s[2], s[3]], r)
}

fn shuffled(n: usize, r: &mut impl Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(r);
    p
}

#[test]
fn compensated_permutations_preserve_logits() {
    let arch = ArchDescriptor::desk_default();
    let images = probe(4, 16, 3);
    for k in 0..25 {
        let ck = random_checkpoint(&arch, 0, 100 + k);
        assert!(check_order_chain(&ck, &images, k).unwrap() <= 1e-9);
    }
}

#[test]
fn identity_permutations_are_exact() {
    let arch = ArchDescriptor::desk_default();
    let ck = random_checkpoint(&arch, 0, 1);
    let ident: Vec<Vec<usize>> = arch.convs.iter().map(|c| (0..c.out_filters).collect()).collect();
    assert_eq!(order_chain_deviation(&ck, &probe(2, 16, 0), &ident, false).unwrap(), 0.0);
}

#[test]
fn uncompensated_permutations_change_logits() {
    let arch = ArchDescriptor::desk_default();
    let images = probe(4, 16, 4);
    let mut r = rng(5);
    for k in 0..25 {
        let ck = random_checkpoint(&arch, 0, 200 + k);
        let perms = random_permutations(&ck, &mut r);
        assert!(order_chain_deviation(&ck, &images, &perms, false).unwrap() > 1e-6);
    }
}

#[test]
fn branch_repr_ignores_filter_and_deep_channel_order() {
    let arch = ArchDescriptor::desk_default();
    let mut r = rng(6);
    for k in 0..200 {
        let ck = random_checkpoint(&arch, 0, 300 + k);
        for l in 0..arch.convs.len() {
            let theta = ck.conv_weight(l);
            let phi = phi_for(theta, r.random_range(1..10), &mut r);
            let base = align_layer(theta, &phi, l, AlignOptions::FULL).unwrap();
            let mut moved = theta.permute_axis(0, &shuffled(theta.shape()[0], &mut r)).unwrap();
            if l > 0 {
                moved = moved.permute_axis(1, &shuffled(theta.shape()[1], &mut r)).unwrap();
            }
            let after = align_layer(&moved, &phi, l, AlignOptions::FULL).unwrap();
            assert_eq!(after.values, base.values, "layer {}", l);
        }
    }
}

#[test]
fn first_layer_channel_order_matters() {
    let arch = ArchDescriptor::desk_default();
    let mut r = rng(7);
    let ck = random_checkpoint(&arch, 0, 8);
    let theta = ck.conv_weight(0);
    let phi = phi_for(theta, 8, &mut r);
    let base = score_layer(theta, &phi, 0, AlignOptions::FULL).unwrap();
    let changed = (0..20).any(|_| {
        let moved = theta.permute_axis(1, &shuffled(3, &mut r)).unwrap();
        score_layer(&moved, &phi, 0, AlignOptions::FULL).unwrap().scores != base.scores
    });
    assert!(changed);
}

#[test]
fn disabled_alignment_keeps_stored_order() {
    let mut r = rng(9);
    let theta = random_tensor(vec![4, 3, 3, 3], &mut r);
    let phi = random_tensor(vec![2, 3, 3, 3], &mut r);
    let s = score_layer(&theta, &phi, 1, AlignOptions::NONE).unwrap();
    let repr = align_layer(&theta, &phi, 1, AlignOptions::NONE).unwrap();
    for j in 0..2 {
        for i in 0..4 {
            assert_eq!(repr.column(j)[i], s.get(i, j));
        }
    }
}

/// Finite-difference step; the representation is piecewise linear in phi,
/// so central differences are exact while no max or sort decision flips.
const STEP: f64 = 1e-6;

#[test]
fn phi_gradient_matches_central_differences() {
    let mut r = rng(10);
    let mut checked = 0;
    while checked < 200 {
        let g = r.random_range(1..5);
        let c = r.random_range(1..4);
        let k = r.random_range(1..3);
        let layer = r.random_range(0..3);
        let c = if layer == 0 { 3 } else { c };
        let theta = random_tensor(vec![g, c, k, k], &mut r);
        let phi = phi_for(&theta, r.random_range(1..4), &mut r);
        let opts = AlignOptions::FULL;
        let bound: f64 = theta.data().iter().fold(0.0, |m, v| m.max(v.abs()));
        if tie_margin(&theta, &phi, layer, opts).unwrap() <= (1e-8f64).max(4.0 * STEP * bound) {
            continue;
        }
        let repr = align_layer(&theta, &phi, layer, opts).unwrap();
        let up: Vec<f64> = (0..repr.len()).map(|_| r.random_range(-1.0..1.0)).collect();
        let grad = backprop_scores(&repr, &theta, &phi, &up).unwrap();
        let loss = |p: &[f64]| {
            let t = Tensor::new(phi.shape().to_vec(), p.to_vec()).unwrap();
            let v = align_layer(&theta, &t, layer, opts).unwrap().values;
            v.iter().zip(&up).map(|(a, b)| a * b).sum::<f64>()
        };
        for i in 0..phi.len() {
            let mut p = phi.data().to_vec();
            p[i] += STEP;
            let hi = loss(&p);
            p[i] -= 2.0 * STEP;
            let lo = loss(&p);
            let fd = (hi - lo) / (2.0 * STEP);
            assert!(rel_err(fd, grad.data()[i]) <= 1e-6, "phi[{}]: {} vs {}", i, fd, grad.data()[i]);
        }
        checked += 1;
    }
}

#[test]
fn zero_upstream_gives_zero_gradient() {
    let mut r = rng(11);
    let theta = random_tensor(vec![3, 2, 3, 3], &mut r);
    let phi = random_tensor(vec![2, 2, 3, 3], &mut r);
    let repr = align_layer(&theta, &phi, 1, AlignOptions::FULL).unwrap();
    let g = backprop_scores(&repr, &theta, &phi, &vec![0.0; repr.len()]).unwrap();
    assert!(g.data().iter().all(|&v| v == 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn columns_are_non_increasing(
        seed in any::<u64>(),
        layer in 0usize..3,
        g in 1usize..9,
        gp in 1usize..6,
        c in 1usize..5,
    ) {
        let mut r = rng(seed);
        let c = if layer == 0 { 3 } else { c };
        let theta = random_tensor(vec![g, c, 3, 3], &mut r);
        let phi = random_tensor(vec![gp, c, 3, 3], &mut r);
        let repr = canonicalize(&score_layer(&theta, &phi, layer, AlignOptions::FULL).unwrap());
        prop_assert_eq!(repr.len(), g * gp);
        for j in 0..gp {
            prop_assert!(repr.column(j).windows(2).all(|w| w[0] >= w[1]));
            let mut p = repr.routing.permutations[j].clone();
            p.sort_unstable();
            prop_assert_eq!(p, (0..g).collect::<Vec<_>>());
        }
    }

    #[test]
    fn deep_scores_ignore_channel_permutations(seed in any::<u64>(), g in 1usize..5, c in 1usize..6) {
        let mut r = rng(seed);
        let theta = random_tensor(vec![g, c, 3, 3], &mut r);
        let phi = random_tensor(vec![3, c, 3, 3], &mut r);
        let moved = theta.permute_axis(1, &shuffled(c, &mut r)).unwrap();
        let a = score_layer(&theta, &phi, 2, AlignOptions::FULL).unwrap();
        let b = score_layer(&moved, &phi, 2, AlignOptions::FULL).unwrap();
        prop_assert_eq!(a.scores, b.scores);
    }
}
