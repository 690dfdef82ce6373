//! Does parameter similarity predict transfer? For source/target task pairs,
//! clusters target images with the source checkpoint's features and compares
//! the clustering quality with the two checkpoints' similarity.
//!
//!     cargo run --release --example transfer -- [modelset_dir] [plot.svg]

mod common;

use wsk::eval::{eval_transferability, scatter_svg, train_on_split, EvalSettings, TransferSettings};
use wsk::second_order::FrontEnd;
use wsk::store::{make_split, SplitMode};

fn main() -> wsk::Result<()> {
    let corpus = common::corpus()?;
    let settings = EvalSettings::default();
    let plan = make_split(&corpus.manifest, SplitMode::Retrieval, 0)?;
    let (params, _) = train_on_split(&corpus, &plan, FrontEnd::ALIGNED, &settings.train, &settings, None)?;
    let n_tasks = corpus.n_tasks();
    let transfer = TransferSettings {
        n_pairs: TransferSettings::default().n_pairs.min(n_tasks * (n_tasks - 1)),
        ..TransferSettings::default()
    };
    let report = eval_transferability(&corpus, &params, &transfer, 0, &settings)?;
    for p in &report.pairs {
        println!("{:2} -> {:2}  similarity {:+.3}  ARI {:.3}", p.source_task, p.target_task, p.similarity, p.ari);
    }
    let c = report.correlation.as_ref().unwrap();
    println!("spearman {:?} over {} pairs", c.spearman, c.n_pairs);

    if let Some(path) = std::env::args().nth(2) {
        let (xs, ys): (Vec<f64>, Vec<f64>) = report.pairs.iter().map(|p| (p.similarity, p.ari)).unzip();
        let svg = scatter_svg("similarity vs transfer", "parameter similarity", "ARI", &xs, &ys);
        std::fs::write(&path, svg).map_err(|e| wsk::Error::io(&path, e))?;
        println!("wrote {}", path);
    }
    Ok(())
}
