//! Which branch carries the signal, and what each half of the alignment buys.
//!
//!     cargo run --release --example ablations -- [modelset_dir]

mod common;

use common::pct;
use wsk::eval::{ablate_alignment, ablate_branches, random_topk, EvalSettings};

fn main() -> wsk::Result<()> {
    let corpus = common::corpus()?;
    let settings = EvalSettings::default();
    let seeds = [0, 1, 2];
    println!("random top-1 {}", pct(random_topk(1, corpus.n_tasks())));

    println!("one branch at a time:");
    for row in &ablate_branches(&corpus, &seeds, &settings)?.rows {
        println!("  {:10} top-1 {}", row.label, pct(row.top1()));
    }
    println!("alignment switched on and off:");
    for row in &ablate_alignment(&corpus, &seeds, &settings)?.rows {
        println!("  {:34} top-1 {}", row.label, pct(row.top1()));
    }
    Ok(())
}
