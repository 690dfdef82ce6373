//! Task classification of held-out checkpoints, all baselines side by side.
//!
//!     cargo run --release --example classify -- [modelset_dir]

mod common;

use common::pct;
use wsk::eval::{eval_classification, BaselineMode, EvalSettings};

fn main() -> wsk::Result<()> {
    let corpus = common::corpus()?;
    let settings = EvalSettings::default();
    println!("{} tasks; top-1 / top-5 / top-10 over split seeds 0..3", corpus.n_tasks());
    for mode in BaselineMode::ALL {
        let report = eval_classification(&corpus, mode, &[0, 1, 2], &settings)?;
        let row = &report.rows[0];
        let cells: Vec<String> = row.values.iter().map(|&v| pct(v)).collect();
        println!("{:20} {}", mode.name(), cells.join("  "));
    }
    Ok(())
}
