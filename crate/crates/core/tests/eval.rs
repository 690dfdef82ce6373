mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

use common::{manifest, random_checkpoint, rng};
use wsk::eval::{
    ari, eval_classification, eval_retrieval, kmeans, random_cmc, random_topk, BaselineMode, Corpus, EvalReport,
    EvalSettings,
};
use wsk::second_order::{ModelConfig, SecondOrderParams};
use wsk::ArchDescriptor;

fn labels(n: usize, k: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0..k, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn ari_identity_symmetry_relabelling(
        (a, b) in (2usize..40).prop_flat_map(|n| (labels(n, 4), labels(n, 5))),
        seed in any::<u64>(),
    ) {
        let distinct = |x: &[usize]| { let mut v = x.to_vec(); v.sort_unstable(); v.dedup(); v.len() };
        if distinct(&a) >= 2 {
            prop_assert!((ari(&a, &a).unwrap() - 1.0).abs() <= 1e-12);
        }
        let ab = ari(&a, &b).unwrap();
        prop_assert_eq!(ab, ari(&b, &a).unwrap());
        prop_assert!((-1.0..=1.0).contains(&ab));
        let mut ids: Vec<usize> = (0..5).collect();
        ids.shuffle(&mut rng(seed));
        let relabelled: Vec<usize> = b.iter().map(|&v| ids[v] + 10).collect();
        prop_assert!((ari(&a, &relabelled).unwrap() - ab).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn kmeans_objective_never_increases(seed in any::<u64>(), n in 4usize..60, k in 2usize..5, dim in 1usize..5) {
        let mut r = rng(seed);
        let points: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| r.random_range(-3.0..3.0)).collect()).collect();
        let km = kmeans(&points, k.min(n), seed, 100).unwrap();
        for w in km.objective.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12, "{:?}", km.objective);
        }
        prop_assert_eq!(km.labels.len(), n);
        prop_assert_eq!(kmeans(&points, k.min(n), seed, 100).unwrap().labels, km.labels);
    }
}

#[test]
fn random_baselines_match_simulation() {
    let mut r = rng(77);
    let trials = 20_000;
    let within = |p: f64, hits: usize| {
        let est = hits as f64 / trials as f64;
        let se = (p * (1.0 - p) / trials as f64).sqrt();
        (est - p).abs() <= 3.0 * se.max(1e-12)
    };
    for (n, k) in [(16, 1), (16, 5), (16, 10), (50, 1)] {
        let hits = (0..trials).filter(|_| r.random_range(0..n) < k).count();
        assert!(within(random_topk(k, n), hits), "top-{} of {}", k, n);
    }
    // gallery of 32 with 8 relevant, as in the desk retrieval split
    for k in [1, 5, 10] {
        let mut gallery: Vec<bool> = (0..32).map(|i| i < 8).collect();
        let hits = (0..trials)
            .filter(|_| {
                gallery.shuffle(&mut r);
                gallery[..k].iter().any(|&m| m)
            })
            .count();
        assert!(within(random_cmc(k, 32, 8), hits), "cmc@{}", k);
    }
    assert_eq!(random_topk(1, 50), 0.02);
}

fn duplicate_corpus(n_tasks: usize, repeats: usize) -> Corpus {
    let arch = ArchDescriptor::desk_default();
    let m = manifest(n_tasks, repeats, &arch);
    let cks = m
        .rows
        .iter()
        .map(|row| {
            let mut ck = random_checkpoint(&arch, row.task_id, 1000 + row.task_id as u64);
            ck.seed = row.seed;
            Some(ck)
        })
        .collect();
    Corpus::new(m, cks).unwrap()
}

#[test]
fn duplicated_checkpoints_are_perfectly_separable() {
    let corpus = duplicate_corpus(4, 4);
    let settings = EvalSettings::default();
    let r = eval_classification(&corpus, BaselineMode::FrobeniusAligned, &[0], &settings).unwrap();
    assert_eq!(r.rows[0].top1(), 1.0);
}

#[test]
fn identical_query_ranks_its_twin_first() {
    let corpus = duplicate_corpus(5, 4);
    let r = eval_retrieval(&corpus, BaselineMode::FrobeniusAligned, &[1], &EvalSettings::default()).unwrap();
    assert_eq!(r.rows[0].top1(), 1.0);
    let p = SecondOrderParams::init(&corpus.manifest.arch, 3, &ModelConfig::default(), 0).unwrap();
    let ck = corpus.checkpoint(0).unwrap();
    assert_eq!(p.similarity(ck, ck, 0).unwrap().cosine, 1.0);
}

#[test]
fn random_prediction_is_analytic() {
    let corpus = duplicate_corpus(8, 3);
    let r = eval_classification(&corpus, BaselineMode::RandomPrediction, &[0, 1], &EvalSettings::default()).unwrap();
    assert_eq!(r.rows[0].values, vec![1.0 / 8.0, 5.0 / 8.0, 1.0]);
}

#[test]
fn reports_are_reproducible() {
    let corpus = duplicate_corpus(4, 3);
    let settings = EvalSettings { jobs: 2, ..EvalSettings::default() };
    let run = |s: &EvalSettings| {
        eval_classification(&corpus, BaselineMode::FrobeniusUnaligned, &[3, 4], s)
            .unwrap()
            .to_json_bytes()
            .unwrap()
    };
    let a = run(&settings);
    assert_eq!(a, run(&EvalSettings::default()));
    let back = EvalReport::from_json_bytes(&a).unwrap();
    assert_eq!(back.to_json_bytes().unwrap(), a);
    assert!(!back.to_csv_bytes().unwrap().is_empty());
}
