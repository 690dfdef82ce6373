//! Retrieval of checkpoints from tasks the second-order network never saw.
//! Prints CMC rank-k and the top of each query's ranking.
//!
//!     cargo run --release --example retrieve -- [modelset_dir]

mod common;

use common::pct;
use wsk::eval::{eval_retrieval, BaselineMode, EvalSettings};

fn main() -> wsk::Result<()> {
    let corpus = common::corpus()?;
    let settings = EvalSettings::default();
    for mode in BaselineMode::ALL {
        let report = eval_retrieval(&corpus, mode, &[0], &settings)?;
        let row = &report.rows[0];
        let cells: Vec<String> = row.ks.iter().zip(&row.values).map(|(k, &v)| format!("rank-{} {}", k, pct(v))).collect();
        println!("{:20} {}", mode.name(), cells.join("  "));
        if mode == BaselineMode::FrobeniusAligned {
            for q in &report.queries {
                let tasks: Vec<usize> = q.top.iter().map(|&r| corpus.manifest.rows[r].task_id).collect();
                println!("  query row {:3} task {:2}: first match at rank {}, top tasks {:?}", q.row, q.task_id, q.rank, tasks);
            }
        }
    }
    Ok(())
}
