use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cluster::{ari, kmeans, spearman};
use super::metrics::{descending_order, hit_rate, random_cmc, random_topk, rank_of};
use super::report::{Correlation, EvalReport, MetricRow, Protocol, QueryDetail, TransferPair};
use super::{BaselineMode, Corpus, EvalSettings};
use crate::align::AlignOptions;
use crate::error::{Error, Result};
use crate::forge::{sample_batch, Network};
use crate::rng;
use crate::second_order::{
    cosine, one_hot_weights, Feature, FrontEnd, ModelConfig, SecondOrderParams, SecondOrderTrainConfig,
};
use crate::store::{make_split, SplitMode, SplitPlan};

/// Runs `f` over `items` on up to `jobs` threads, returning results in input order.
fn run_all<T, U, F>(jobs: usize, items: &[T], f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync + Send,
{
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {}", e)))?;
    pool.install(|| items.par_iter().map(f).collect())
}

/// Seed for parameter init and epoch shuffling of the run on a given split.
/// It does not depend on the mode, so variants that coincide by definition
/// produce identical parameters.
fn run_seed(train: &SecondOrderTrainConfig, split_seed: u64) -> u64 {
    rng::derive_seed(train.seed, &[split_seed])
}

/// Trains a second-order network on the training part of `plan`.
///
/// Classification uses task ids as labels; retrieval relabels its training
/// tasks `0..n` in the order listed by the plan. Returns the parameters and
/// the loss curve.
pub fn train_on_split(
    corpus: &Corpus,
    plan: &SplitPlan,
    front_end: FrontEnd,
    train: &SecondOrderTrainConfig,
    settings: &EvalSettings,
    branch_weights: Option<Vec<f64>>,
) -> Result<(SecondOrderParams, Vec<f64>)> {
    let (rows, n_tasks, label): (Vec<usize>, usize, Box<dyn Fn(usize) -> usize>) = match plan {
        SplitPlan::Classification { .. } => (plan.train_rows(), corpus.n_tasks(), Box::new(|t| t)),
        SplitPlan::Retrieval { train_tasks, train, .. } => {
            let tasks = train_tasks.clone();
            (
                train.clone(),
                tasks.len(),
                Box::new(move |t| tasks.iter().position(|&x| x == t).expect("row of a training task")),
            )
        }
    };
    let samples = rows
        .iter()
        .map(|&r| {
            let ck = corpus.checkpoint(r)?;
            Ok((ck, label(ck.task_id)))
        })
        .collect::<Result<Vec<_>>>()?;
    let seed = run_seed(train, plan.seed());
    let model = ModelConfig {
        front_end,
        branch_weights,
        second_filters: settings.second_filters.clone(),
    };
    let mut params = SecondOrderParams::init(&corpus.manifest.arch, n_tasks, &model, seed)?;
    let mut cfg = train.clone();
    cfg.seed = seed;
    let start = Instant::now();
    let curve = params.train(&samples, &cfg)?;
    debug!(
        "trained {:?} on {} checkpoints, final loss {:.4} in {:.1?}",
        front_end,
        samples.len(),
        curve.last().copied().unwrap_or(f64::NAN),
        start.elapsed()
    );
    Ok((params, curve))
}

struct RunOutput {
    values: Vec<f64>,
    queries: Vec<QueryDetail>,
    final_loss: Option<f64>,
}

fn classification_run(
    corpus: &Corpus,
    seed: u64,
    front_end: Option<FrontEnd>,
    train: &SecondOrderTrainConfig,
    weights: Option<Vec<f64>>,
    settings: &EvalSettings,
    label: &str,
) -> Result<RunOutput> {
    let plan = make_split(&corpus.manifest, SplitMode::Classification, seed)?;
    let n = corpus.n_tasks();
    let Some(front_end) = front_end else {
        return Ok(RunOutput {
            values: settings.ks.iter().map(|&k| random_topk(k, n)).collect(),
            queries: Vec::new(),
            final_loss: None,
        });
    };
    let (params, curve) = train_on_split(corpus, &plan, front_end, train, settings, weights)?;
    let mut ranks = Vec::new();
    let mut queries = Vec::new();
    for row in plan.test_rows() {
        let ck = corpus.checkpoint(row)?;
        let fused = params.forward(ck, None)?.fused;
        let rank = rank_of(&fused, ck.task_id);
        ranks.push(rank);
        queries.push(QueryDetail {
            label: label.to_string(),
            seed,
            row,
            task_id: ck.task_id,
            rank,
            top: descending_order(&fused).into_iter().take(5).collect(),
        });
    }
    Ok(RunOutput {
        values: settings.ks.iter().map(|&k| hit_rate(&ranks, k)).collect(),
        queries,
        final_loss: curve.last().copied(),
    })
}

fn retrieval_run(
    corpus: &Corpus,
    seed: u64,
    front_end: Option<FrontEnd>,
    settings: &EvalSettings,
    label: &str,
) -> Result<RunOutput> {
    let plan = make_split(&corpus.manifest, SplitMode::Retrieval, seed)?;
    let SplitPlan::Retrieval { test, .. } = &plan else {
        unreachable!("retrieval split");
    };
    let gallery: Vec<usize> = test.iter().flat_map(|t| t.gallery.iter().copied()).collect();
    let gallery_tasks: Vec<usize> = gallery
        .iter()
        .map(|&r| corpus.manifest.rows[r].task_id)
        .collect();
    let queries: Vec<(usize, usize)> = test
        .iter()
        .flat_map(|t| t.queries.iter().map(move |&q| (q, t.task_id)))
        .collect();
    let Some(front_end) = front_end else {
        let values = settings
            .ks
            .iter()
            .map(|&k| {
                queries
                    .iter()
                    .map(|&(_, task)| {
                        let relevant = gallery_tasks.iter().filter(|&&t| t == task).count();
                        random_cmc(k, gallery.len(), relevant)
                    })
                    .sum::<f64>()
                    / queries.len() as f64
            })
            .collect();
        return Ok(RunOutput {
            values,
            queries: Vec::new(),
            final_loss: None,
        });
    };
    let (params, curve) = train_on_split(
        corpus,
        &plan,
        front_end,
        &settings.train,
        settings,
        settings.branch_weights.clone(),
    )?;
    let branch = settings.feature_branch;
    let gallery_features = gallery
        .iter()
        .map(|&r| params.extract_features(corpus.checkpoint(r)?, branch))
        .collect::<Result<Vec<Feature>>>()?;
    let mut ranks = Vec::new();
    let mut details = Vec::new();
    for &(q, task) in &queries {
        let fq = params.extract_features(corpus.checkpoint(q)?, branch)?;
        let sims: Vec<f64> = gallery_features.iter().map(|g| cosine(&fq, g).cosine).collect();
        let order = descending_order(&sims);
        let rank = 1 + order
            .iter()
            .position(|&i| gallery_tasks[i] == task)
            .unwrap_or(order.len());
        ranks.push(rank);
        details.push(QueryDetail {
            label: label.to_string(),
            seed,
            row: q,
            task_id: task,
            rank,
            top: order.iter().take(10).map(|&i| gallery[i]).collect(),
        });
    }
    Ok(RunOutput {
        values: settings.ks.iter().map(|&k| hit_rate(&ranks, k)).collect(),
        queries: details,
        final_loss: curve.last().copied(),
    })
}

fn mean_row(
    label: String,
    ks: &[usize],
    runs: Vec<RunOutput>,
    report: &mut EvalReport,
) -> MetricRow {
    let n = runs.len() as f64;
    let values = (0..ks.len())
        .map(|i| runs.iter().map(|r| r.values[i]).sum::<f64>() / n)
        .collect();
    let mut per_seed = Vec::new();
    let mut final_train_loss = Vec::new();
    for r in runs {
        per_seed.push(r.values);
        final_train_loss.extend(r.final_loss);
        report.queries.extend(r.queries);
    }
    MetricRow {
        label,
        mode: None,
        branch: None,
        align: None,
        ks: ks.to_vec(),
        values,
        per_seed,
        final_train_loss,
    }
}

fn check_seeds(seeds: &[u64]) -> Result<()> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one split seed is required".into()));
    }
    Ok(())
}

/// Task classification of held-out checkpoints, averaged over split seeds.
pub fn eval_classification(
    corpus: &Corpus,
    mode: BaselineMode,
    seeds: &[u64],
    settings: &EvalSettings,
) -> Result<EvalReport> {
    settings.validate()?;
    check_seeds(seeds)?;
    let start = Instant::now();
    let runs = run_all(settings.jobs, seeds, |&s| {
        classification_run(
            corpus,
            s,
            mode.front_end(),
            &settings.train,
            settings.branch_weights.clone(),
            settings,
            mode.name(),
        )
    })?;
    let mut report = EvalReport::new(Protocol::Classification, Some(mode), seeds);
    let mut row = mean_row(mode.name().into(), &settings.ks, runs, &mut report);
    row.mode = Some(mode);
    report.rows.push(row);
    report.runtime = start.elapsed();
    info!(
        "classification {}: top-1 {:.3} in {:.1?}",
        mode,
        report.rows[0].top1(),
        report.runtime
    );
    Ok(report)
}

/// Retrieval of unseen-task gallery checkpoints by cosine similarity of
/// parameter features, averaged over split seeds.
pub fn eval_retrieval(
    corpus: &Corpus,
    mode: BaselineMode,
    seeds: &[u64],
    settings: &EvalSettings,
) -> Result<EvalReport> {
    settings.validate()?;
    check_seeds(seeds)?;
    let start = Instant::now();
    let runs = run_all(settings.jobs, seeds, |&s| {
        retrieval_run(corpus, s, mode.front_end(), settings, mode.name())
    })?;
    let mut report = EvalReport::new(Protocol::Retrieval, Some(mode), seeds);
    let mut row = mean_row(mode.name().into(), &settings.ks, runs, &mut report);
    row.mode = Some(mode);
    report.rows.push(row);
    report.runtime = start.elapsed();
    info!(
        "retrieval {}: rank-1 {:.3} in {:.1?}",
        mode,
        report.rows[0].top1(),
        report.runtime
    );
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransferSettings {
    pub n_pairs: usize,
    /// Images in each fresh target batch that gets clustered.
    pub target_samples: usize,
    pub kmeans_iters: usize,
}

impl Default for TransferSettings {
    fn default() -> Self {
        TransferSettings {
            n_pairs: 40,
            target_samples: 200,
            kmeans_iters: 100,
        }
    }
}

/// Source→target transfer: clusters a fresh target batch with the source
/// checkpoint's pooled features (k = 2), scores the clustering by ARI against
/// the target labels, and correlates ARI with the parameter similarity of the
/// two checkpoints under `params`.
pub fn eval_transferability(
    corpus: &Corpus,
    params: &SecondOrderParams,
    transfer: &TransferSettings,
    seed: u64,
    settings: &EvalSettings,
) -> Result<EvalReport> {
    let start = Instant::now();
    let by_task = corpus.manifest.admitted_by_task();
    let tasks: Vec<usize> = by_task.keys().copied().collect();
    let mut candidates: Vec<(usize, usize)> = tasks
        .iter()
        .flat_map(|&s| tasks.iter().filter(move |&&t| t != s).map(move |&t| (s, t)))
        .collect();
    if transfer.n_pairs < 10 || transfer.n_pairs > candidates.len() {
        return Err(Error::Config(format!(
            "n_pairs = {} must be in [10, {}]",
            transfer.n_pairs,
            candidates.len()
        )));
    }
    let mut r = rng::stream(seed, &[0x7A11]);
    candidates.shuffle(&mut r);
    candidates.truncate(transfer.n_pairs);
    let mut pairs = Vec::with_capacity(candidates.len());
    for (s, t) in candidates {
        let source_row = by_task[&s][r.random_range(0..by_task[&s].len())];
        let target_row = by_task[&t][r.random_range(0..by_task[&t].len())];
        let (src, tgt) = (corpus.checkpoint(source_row)?, corpus.checkpoint(target_row)?);
        let sim = cosine(
            &params.extract_features(src, settings.feature_branch)?,
            &params.extract_features(tgt, settings.feature_branch)?,
        );
        let (ari_value, converged) = transfer_ari(corpus, src, t, transfer, seed)?;
        pairs.push(TransferPair {
            source_task: s,
            target_task: t,
            source_row,
            target_row,
            similarity: sim.cosine,
            ari: ari_value,
            valid: converged && !sim.degenerate,
        });
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = pairs
        .iter()
        .filter(|p| p.valid)
        .map(|p| (p.similarity, p.ari))
        .unzip();
    let mut report = EvalReport::new(Protocol::Transferability, Some(BaselineMode::FrobeniusAligned), &[seed]);
    report.correlation = Some(Correlation {
        spearman: spearman(&xs, &ys),
        n_pairs: xs.len(),
        n_excluded: pairs.len() - xs.len(),
    });
    report.pairs = pairs;
    report.runtime = start.elapsed();
    info!(
        "transferability: spearman {:?} over {} pairs in {:.1?}",
        report.correlation.as_ref().and_then(|c| c.spearman),
        report.pairs.len(),
        report.runtime
    );
    Ok(report)
}

/// ARI of a 2-means clustering of `target` images in the feature space of `source`.
pub(crate) fn transfer_ari(
    corpus: &Corpus,
    source: &crate::store::Checkpoint,
    target_task: usize,
    transfer: &TransferSettings,
    seed: u64,
) -> Result<(f64, bool)> {
    let spec = corpus
        .manifest
        .suite
        .iter()
        .find(|t| t.task_id == target_task)
        .ok_or_else(|| Error::Config(format!("task {} not in the suite", target_task)))?;
    let batch_seed = rng::derive_seed(seed, &[0xBA7C, target_task as u64]);
    let batch = sample_batch(spec, transfer.target_samples, batch_seed)?;
    let features = Network::from_checkpoint(source)?.batch_features(&batch.images)?;
    let km = kmeans(
        &features,
        2,
        rng::derive_seed(seed, &[0xC1A5, target_task as u64, source.seed]),
        transfer.kmeans_iters,
    )?;
    Ok((ari(&km.labels, &batch.labels)?, km.converged))
}

/// Per-branch classification with one-hot fusion weights and the extended schedule.
pub fn ablate_branches(corpus: &Corpus, seeds: &[u64], settings: &EvalSettings) -> Result<EvalReport> {
    settings.validate()?;
    check_seeds(seeds)?;
    let start = Instant::now();
    let n = corpus.manifest.arch.convs.len();
    let train = settings.train.extended();
    let jobs: Vec<(usize, u64)> = (0..n).flat_map(|l| seeds.iter().map(move |&s| (l, s))).collect();
    let mut runs = run_all(settings.jobs, &jobs, |&(l, s)| {
        classification_run(
            corpus,
            s,
            Some(FrontEnd::ALIGNED),
            &train,
            Some(one_hot_weights(n, l)),
            settings,
            &format!("branch {}", l),
        )
    })?
    .into_iter();
    let mut report = EvalReport::new(Protocol::BranchAblation, Some(BaselineMode::FrobeniusAligned), seeds);
    for l in 0..n {
        let chunk: Vec<RunOutput> = runs.by_ref().take(seeds.len()).collect();
        let mut row = mean_row(format!("branch {}", l), &settings.ks, chunk, &mut report);
        row.branch = Some(l);
        row.mode = Some(BaselineMode::FrobeniusAligned);
        report.rows.push(row);
    }
    report.runtime = start.elapsed();
    info!("branch ablation done in {:.1?}", report.runtime);
    Ok(report)
}

/// The four alignment variants, in report order.
pub const ALIGN_VARIANTS: [AlignOptions; 4] = [
    AlignOptions {
        filter_align: true,
        channel_align: true,
    },
    AlignOptions {
        filter_align: true,
        channel_align: false,
    },
    AlignOptions {
        filter_align: false,
        channel_align: true,
    },
    AlignOptions {
        filter_align: false,
        channel_align: false,
    },
];

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

/// Filter and channel alignment switched on and off independently, on every
/// branch after the first, with one-hot fusion weights.
pub fn ablate_alignment(corpus: &Corpus, seeds: &[u64], settings: &EvalSettings) -> Result<EvalReport> {
    settings.validate()?;
    check_seeds(seeds)?;
    let n = corpus.manifest.arch.convs.len();
    if n < 2 {
        return Err(Error::Precondition(
            "alignment ablation needs at least two conv layers".into(),
        ));
    }
    let start = Instant::now();
    let mut variants = Vec::new();
    for l in 1..n {
        for v in ALIGN_VARIANTS {
            variants.push((l, v));
        }
    }
    let label = |l: usize, v: AlignOptions| {
        format!(
            "branch {} filter {} channel {}",
            l,
            on_off(v.filter_align),
            on_off(v.channel_align)
        )
    };
    let jobs: Vec<(usize, AlignOptions, u64)> = variants
        .iter()
        .flat_map(|&(l, v)| seeds.iter().map(move |&s| (l, v, s)))
        .collect();
    let mut runs = run_all(settings.jobs, &jobs, |&(l, v, s)| {
        classification_run(
            corpus,
            s,
            Some(FrontEnd::Frobenius { align: v }),
            &settings.train,
            Some(one_hot_weights(n, l)),
            settings,
            &label(l, v),
        )
    })?
    .into_iter();
    let mut report = EvalReport::new(Protocol::AlignmentAblation, None, seeds);
    for (l, v) in variants {
        let chunk: Vec<RunOutput> = runs.by_ref().take(seeds.len()).collect();
        let mut row = mean_row(label(l, v), &settings.ks, chunk, &mut report);
        row.branch = Some(l);
        row.align = Some(v);
        report.rows.push(row);
    }
    report.runtime = start.elapsed();
    info!("alignment ablation done in {:.1?}", report.runtime);
    Ok(report)
}
