//! The `wsk` command line: one subcommand per pipeline stage.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage or
//! configuration errors. `WSK_LOG` sets the log filter (default `info`).

mod config;

pub use config::{EvalSelection, ModelSetConfig, ReportFormat, RunConfig};

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, info};

use crate::align::check_order_chain;
use crate::error::{Error, Result};
use crate::eval::{
    ablate_alignment, ablate_branches, bar_chart_svg, eval_classification, eval_retrieval,
    eval_transferability, random_topk, scatter_svg, train_on_split, BaselineMode, Corpus,
    EvalReport,
};
use crate::forge::{build_modelset, generate_task_suite, sample_batch};
use crate::second_order::{load_params, save_params, SecondOrderParams};
use crate::store::container::write_atomic;
use crate::store::{make_split, ModelSet, SplitMode};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "wsk", version, about = "Second-order similarity between trained CNN checkpoints")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Concurrent training runs.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    /// Modelset directory (read only).
    #[arg(long)]
    pub modelset: PathBuf,
    #[command(flatten)]
    pub common: Common,
    /// Split seeds, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub seed: Option<Vec<u64>>,
    /// Report formats to write.
    #[arg(long, value_delimiter = ',')]
    pub report: Option<Vec<ReportFormat>>,
    /// Also write SVG charts.
    #[arg(long)]
    pub plot: bool,
    /// Second-order training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    All,
    Random,
    Fc,
    Unaligned,
    Aligned,
}

impl ModeArg {
    fn modes(self) -> Option<Vec<BaselineMode>> {
        match self {
            ModeArg::All => None,
            ModeArg::Random => Some(vec![BaselineMode::RandomPrediction]),
            ModeArg::Fc => Some(vec![BaselineMode::FcOnly]),
            ModeArg::Unaligned => Some(vec![BaselineMode::FrobeniusUnaligned]),
            ModeArg::Aligned => Some(vec![BaselineMode::FrobeniusAligned]),
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a task suite, train every checkpoint and write the modelset.
    BuildModelset {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        tasks: Option<usize>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a second-order network on one split and save it.
    TrainSecondOrder {
        #[command(flatten)]
        args: EvalArgs,
        #[arg(long, value_enum, default_value = "classification")]
        split: SplitArg,
        #[arg(long, value_enum, default_value = "aligned")]
        mode: ModeArg,
    },
    /// Run an evaluation protocol.
    Eval {
        #[command(subcommand)]
        protocol: EvalCommand,
    },
    /// Run an ablation.
    Ablate {
        #[command(subcommand)]
        which: AblateCommand,
    },
    /// Verify that compensated filter permutations leave checkpoint outputs unchanged.
    CheckSymmetry {
        #[arg(long)]
        modelset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Checkpoints to test (all admitted ones by default).
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, default_value_t = 1e-9)]
        tolerance: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Classification,
    Retrieval,
}

#[derive(Subcommand, Debug)]
pub enum EvalCommand {
    /// Task classification of held-out checkpoints.
    Classify {
        #[command(flatten)]
        args: EvalArgs,
        #[arg(long, value_enum, default_value = "all")]
        mode: ModeArg,
    },
    /// Retrieval of unseen-task checkpoints.
    Retrieve {
        #[command(flatten)]
        args: EvalArgs,
        #[arg(long, value_enum, default_value = "all")]
        mode: ModeArg,
    },
    /// Parameter similarity against transfer clustering quality.
    Transfer {
        #[command(flatten)]
        args: EvalArgs,
        /// Trained second-order parameters; trained on the retrieval split when absent.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        pairs: Option<usize>,
    },
}

#[derive(Subcommand, Debug)]
pub enum AblateCommand {
    /// One-hot fusion weights on each branch in turn.
    Branches {
        #[command(flatten)]
        args: EvalArgs,
    },
    /// Filter and channel alignment switched on and off.
    Alignment {
        #[command(flatten)]
        args: EvalArgs,
    },
}

/// Exit code for an error: configuration and precondition problems are usage errors.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Precondition(_) | Error::Capacity { .. } => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

pub fn init_logging() {
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("WSK_LOG", "info"))
        .format_timestamp(None)
        .try_init();
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            error!("{}", e);
            eprintln!("error: {}", e);
            exit_code(&e)
        }
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::BuildModelset {
            common,
            tasks,
            repeats,
            seed,
        } => cmd_build_modelset(&common, tasks, repeats, seed),
        Command::TrainSecondOrder { args, split, mode } => cmd_train(&args, split, mode),
        Command::Eval { protocol } => match protocol {
            EvalCommand::Classify { args, mode } => cmd_eval_table(&args, mode, SplitMode::Classification),
            EvalCommand::Retrieve { args, mode } => cmd_eval_table(&args, mode, SplitMode::Retrieval),
            EvalCommand::Transfer { args, params, pairs } => cmd_transfer(&args, params.as_deref(), pairs),
        },
        Command::Ablate { which } => match which {
            AblateCommand::Branches { args } => cmd_ablate(&args, true),
            AblateCommand::Alignment { args } => cmd_ablate(&args, false),
        },
        Command::CheckSymmetry {
            modelset,
            out,
            seed,
            samples,
            tolerance,
        } => cmd_check_symmetry(&modelset, out.as_deref(), seed, samples, tolerance),
    }
}

fn resolve_common(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load_or_default(common.config.as_ref())?;
    if let Some(j) = common.jobs {
        cfg.second_order.jobs = j;
    }
    Ok(cfg)
}

fn resolve_eval(args: &EvalArgs) -> Result<RunConfig> {
    let mut cfg = resolve_common(&args.common)?;
    if let Some(s) = &args.seed {
        cfg.eval.seeds = s.clone();
    }
    if let Some(r) = &args.report {
        cfg.eval.formats = r.clone();
    }
    if args.plot {
        cfg.eval.plot = true;
    }
    if let Some(e) = args.epochs {
        let scale = |m: usize| m * e / cfg.second_order.train.epochs.max(1);
        cfg.second_order.train.lr.decay_epochs =
            cfg.second_order.train.lr.decay_epochs.iter().map(|&m| scale(m)).collect();
        cfg.second_order.train.epochs = e;
    }
    cfg.validate()?;
    cfg.echo(&args.common.out)?;
    Ok(cfg)
}

fn cmd_build_modelset(common: &Common, tasks: Option<usize>, repeats: Option<usize>, seed: Option<u64>) -> Result<()> {
    let mut cfg = resolve_common(common)?;
    let m = &mut cfg.modelset;
    if let Some(t) = tasks {
        m.n_tasks = t;
    }
    if let Some(r) = repeats {
        m.repeats = r;
    }
    if let Some(s) = seed {
        m.seed = s;
    }
    cfg.validate()?;
    if cfg.modelset.repeats < 2 {
        return Err(Error::Precondition(format!(
            "repeats = {}: every task needs at least 2 checkpoints",
            cfg.modelset.repeats
        )));
    }
    let start = Instant::now();
    let m = &cfg.modelset;
    let suite = generate_task_suite(m.n_tasks, m.seed)?;
    let ms = build_modelset(
        &common.out,
        &suite,
        m.repeats,
        &m.arch,
        &m.train,
        m.seed,
        cfg.second_order.jobs,
    )?;
    cfg.echo(&common.out)?;
    let rows = &ms.manifest.rows;
    let admitted: Vec<f64> = rows.iter().filter(|r| !r.excluded).map(|r| r.train_accuracy).collect();
    let min = admitted.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = admitted.iter().sum::<f64>() / admitted.len() as f64;
    println!(
        "modelset: {} tasks, {} checkpoints ({} excluded), train accuracy min {:.3} mean {:.3}",
        ms.manifest.n_tasks(),
        admitted.len(),
        rows.len() - admitted.len(),
        min,
        mean
    );
    println!("runtime: {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}

fn open_corpus(path: &Path) -> Result<Corpus> {
    let ms = ModelSet::open(path)?;
    Corpus::load(&ms)
}

fn cmd_train(args: &EvalArgs, split: SplitArg, mode: ModeArg) -> Result<()> {
    let cfg = resolve_eval(args)?;
    let corpus = open_corpus(&args.modelset)?;
    let front_end = match mode.modes().as_deref() {
        Some([m]) => m.front_end(),
        _ => None,
    }
    .ok_or_else(|| Error::Config("train-second-order needs --mode fc, unaligned or aligned".into()))?;
    let split_mode = match split {
        SplitArg::Classification => SplitMode::Classification,
        SplitArg::Retrieval => SplitMode::Retrieval,
    };
    let seed = cfg.eval.seeds[0];
    let plan = make_split(&corpus.manifest, split_mode, seed)?;
    let s = &cfg.second_order;
    let (params, curve) = train_on_split(&corpus, &plan, front_end, &s.train, s, s.branch_weights.clone())?;
    let out = &args.common.out;
    save_params(&params, &out.join("second_order.wsk"))?;
    write_atomic(&out.join("split.json"), &serde_json::to_vec_pretty(&plan)?)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "loss"]).map_err(csv_err)?;
    for (e, l) in curve.iter().enumerate() {
        w.write_record([e.to_string(), format!("{:.9}", l)]).map_err(csv_err)?;
    }
    write_atomic(&out.join("loss.csv"), &w.into_inner().map_err(|e| Error::Config(e.to_string()))?)?;
    println!(
        "final train loss {:.4} after {} epochs",
        curve.last().copied().unwrap_or(f64::NAN),
        curve.len()
    );
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Config(format!("csv: {}", e))
}

fn write_report(report: &EvalReport, cfg: &RunConfig, out: &Path, stem: &str) -> Result<()> {
    report.validate()?;
    for f in &cfg.eval.formats {
        match f {
            ReportFormat::Json => report.write_json(&out.join(format!("{}.json", stem)))?,
            ReportFormat::Csv => report.write_csv(&out.join(format!("{}.csv", stem)))?,
        }
    }
    Ok(())
}

fn cmd_eval_table(args: &EvalArgs, mode: ModeArg, split: SplitMode) -> Result<()> {
    let cfg = resolve_eval(args)?;
    let corpus = open_corpus(&args.modelset)?;
    let modes = mode.modes().unwrap_or_else(|| cfg.eval.modes.clone());
    let start = Instant::now();
    let mut reports = Vec::new();
    for m in modes {
        let r = match split {
            SplitMode::Classification => eval_classification(&corpus, m, &cfg.eval.seeds, &cfg.second_order)?,
            SplitMode::Retrieval => eval_retrieval(&corpus, m, &cfg.eval.seeds, &cfg.second_order)?,
        };
        let metric = if split == SplitMode::Classification { "top" } else { "rank" };
        let row = &r.rows[0];
        println!(
            "{:20} {}",
            m.name(),
            row.ks
                .iter()
                .zip(&row.values)
                .map(|(k, v)| format!("{}-{} {:5.1}%", metric, k, 100.0 * v))
                .collect::<Vec<_>>()
                .join("  ")
        );
        reports.push(r);
    }
    let report = EvalReport::merge(reports)?;
    let stem = match split {
        SplitMode::Classification => "classification",
        SplitMode::Retrieval => "retrieval",
    };
    write_report(&report, &cfg, &args.common.out, stem)?;
    if cfg.eval.plot {
        let labels: Vec<String> = report.rows.iter().map(|r| r.label.clone()).collect();
        let values: Vec<f64> = report.rows.iter().map(|r| r.top1()).collect();
        let svg = bar_chart_svg(stem, "top-1", &labels, &values, None);
        write_atomic(&args.common.out.join(format!("{}.svg", stem)), svg.as_bytes())?;
    }
    println!("runtime: {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}

fn cmd_transfer(args: &EvalArgs, params: Option<&Path>, pairs: Option<usize>) -> Result<()> {
    let mut cfg = resolve_eval(args)?;
    if let Some(p) = pairs {
        cfg.transfer.n_pairs = p;
        cfg.echo(&args.common.out)?;
    }
    let corpus = open_corpus(&args.modelset)?;
    let start = Instant::now();
    let seed = cfg.eval.seeds[0];
    let params: SecondOrderParams = match params {
        Some(p) => load_params(p)?,
        None => {
            let plan = make_split(&corpus.manifest, SplitMode::Retrieval, seed)?;
            let s = &cfg.second_order;
            let front_end = BaselineMode::FrobeniusAligned.front_end().expect("trained mode");
            train_on_split(&corpus, &plan, front_end, &s.train, s, s.branch_weights.clone())?.0
        }
    };
    let report = eval_transferability(&corpus, &params, &cfg.transfer, seed, &cfg.second_order)?;
    let out = &args.common.out;
    for f in &cfg.eval.formats {
        match f {
            ReportFormat::Json => report.write_json(&out.join("transferability.json"))?,
            ReportFormat::Csv => write_atomic(&out.join("transferability.csv"), &report.pairs_csv_bytes()?)?,
        }
    }
    if cfg.eval.plot {
        let (xs, ys): (Vec<f64>, Vec<f64>) = report.pairs.iter().map(|p| (p.similarity, p.ari)).unzip();
        let svg = scatter_svg("similarity vs transfer", "parameter similarity", "ARI", &xs, &ys);
        write_atomic(&out.join("transferability.svg"), svg.as_bytes())?;
    }
    let c = report.correlation.as_ref().expect("transferability correlation");
    match c.spearman {
        Some(r) => println!("spearman {:.3} over {} pairs ({} excluded)", r, c.n_pairs, c.n_excluded),
        None => println!("spearman undefined over {} pairs ({} excluded)", c.n_pairs, c.n_excluded),
    }
    println!("runtime: {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}

fn cmd_ablate(args: &EvalArgs, branches: bool) -> Result<()> {
    let cfg = resolve_eval(args)?;
    let corpus = open_corpus(&args.modelset)?;
    let start = Instant::now();
    let (report, stem) = if branches {
        (ablate_branches(&corpus, &cfg.eval.seeds, &cfg.second_order)?, "branch_ablation")
    } else {
        (ablate_alignment(&corpus, &cfg.eval.seeds, &cfg.second_order)?, "alignment_ablation")
    };
    for r in &report.rows {
        println!("{:34} top-1 {:5.1}%", r.label, 100.0 * r.top1());
    }
    write_report(&report, &cfg, &args.common.out, stem)?;
    if cfg.eval.plot {
        let labels: Vec<String> = report
            .rows
            .iter()
            .map(|r| {
                if branches {
                    format!("{}", r.branch.unwrap_or(0))
                } else {
                    let a = r.align.expect("alignment rows carry options");
                    format!(
                        "b{} {}{}",
                        r.branch.unwrap_or(0),
                        if a.filter_align { "F" } else { "-" },
                        if a.channel_align { "C" } else { "-" }
                    )
                }
            })
            .collect();
        let values: Vec<f64> = report.rows.iter().map(|r| r.top1()).collect();
        let chance = random_topk(1, corpus.n_tasks());
        let svg = bar_chart_svg(stem, "top-1", &labels, &values, Some(chance));
        write_atomic(&args.common.out.join(format!("{}.svg", stem)), svg.as_bytes())?;
    }
    println!("runtime: {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}

fn cmd_check_symmetry(
    modelset: &Path,
    out: Option<&Path>,
    seed: u64,
    samples: Option<usize>,
    tolerance: f64,
) -> Result<()> {
    let ms = ModelSet::open(modelset)?;
    let rows: Vec<usize> = ms.manifest.admitted();
    let rows = &rows[..samples.unwrap_or(rows.len()).min(rows.len())];
    let mut worst = 0.0f64;
    let mut per_row = Vec::with_capacity(rows.len());
    for &row in rows {
        let ck = ms.load(row)?;
        let task = &ms.manifest.suite[ck.task_id];
        let probe = sample_batch(task, 4, crate::rng::derive_seed(seed, &[row as u64]))?;
        let dev = check_order_chain(&ck, &probe.images, crate::rng::derive_seed(seed, &[0x5E, row as u64]))?;
        worst = worst.max(dev);
        per_row.push(serde_json::json!({ "row": row, "deviation": dev }));
    }
    info!("checked {} checkpoints", rows.len());
    if let Some(out) = out {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let doc = serde_json::json!({ "max_deviation": worst, "tolerance": tolerance, "rows": per_row });
        let mut bytes = serde_json::to_vec_pretty(&doc)?;
        bytes.push(b'\n');
        write_atomic(&out.join("symmetry.json"), &bytes)?;
    }
    println!("max abs logit deviation {:.3e} over {} checkpoints", worst, rows.len());
    if worst > tolerance {
        return Err(Error::Consistency(format!(
            "order-chain deviation {:.3e} exceeds tolerance {:.1e}",
            worst, tolerance
        )));
    }
    Ok(())
}
