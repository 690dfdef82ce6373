//! Helpers shared by the examples.
#![allow(dead_code)]

use std::path::PathBuf;
use std::time::Instant;

use wsk::cli::ModelSetConfig;
use wsk::eval::Corpus;
use wsk::forge::{build_modelset, generate_task_suite};
use wsk::store::ModelSet;

/// Tasks and repeats of the demo modelset. Small enough to build in a couple
/// of minutes, large enough for every protocol's split.
pub const DEMO_TASKS: usize = 8;
pub const DEMO_REPEATS: usize = 4;

fn demo_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../target/wsk-demo-modelset")
}

/// Opens the modelset named by the first argument, or the cached demo
/// modelset, building it on first use.
pub fn modelset() -> wsk::Result<ModelSet> {
    if let Some(dir) = std::env::args().nth(1) {
        return ModelSet::open(dir);
    }
    let dir = demo_dir();
    if let Ok(ms) = ModelSet::open(&dir) {
        return Ok(ms);
    }
    let cfg = ModelSetConfig::default();
    println!(
        "building a {}x{} demo modelset in {} (cached for later runs)",
        DEMO_TASKS,
        DEMO_REPEATS,
        dir.display()
    );
    let start = Instant::now();
    let suite = generate_task_suite(DEMO_TASKS, cfg.seed)?;
    let ms = build_modelset(&dir, &suite, DEMO_REPEATS, &cfg.arch, &cfg.train, cfg.seed, 1)?;
    println!("built in {:.1?}", start.elapsed());
    Ok(ms)
}

pub fn corpus() -> wsk::Result<Corpus> {
    Corpus::load(&modelset()?)
}

pub fn pct(v: f64) -> String {
    format!("{:5.1}%", 100.0 * v)
}
