//! Builds a modelset: a task suite with several independently trained
//! checkpoints per task, written to disk with a manifest.
//!
//!     cargo run --release --example build_modelset -- <out_dir> [n_tasks] [repeats]
//!
//! The full 16 x 10 modelset takes several minutes on one core.

use std::time::Instant;

use wsk::cli::ModelSetConfig;
use wsk::forge::{build_modelset, generate_task_suite};

fn main() -> wsk::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().expect("usage: build_modelset <out_dir> [n_tasks] [repeats]");
    let mut cfg = ModelSetConfig::default();
    if let Some(n) = args.next() {
        cfg.n_tasks = n.parse().expect("n_tasks");
    }
    if let Some(r) = args.next() {
        cfg.repeats = r.parse().expect("repeats");
    }
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());

    let start = Instant::now();
    let suite = generate_task_suite(cfg.n_tasks, cfg.seed)?;
    let ms = build_modelset(out.as_ref(), &suite, cfg.repeats, &cfg.arch, &cfg.train, cfg.seed, jobs)?;
    println!("{} checkpoints in {:.1?}", ms.manifest.rows.len(), start.elapsed());

    for (task, rows) in ms.manifest.admitted_by_task() {
        let acc: Vec<String> = rows
            .iter()
            .map(|&r| format!("{:.2}", ms.manifest.rows[r].train_accuracy))
            .collect();
        println!("task {:2} {:40} {}", task, suite[task].name(), acc.join(" "));
    }
    let excluded = ms.manifest.rows.iter().filter(|r| r.excluded).count();
    println!("{} excluded by the accuracy gate", excluded);
    Ok(())
}
