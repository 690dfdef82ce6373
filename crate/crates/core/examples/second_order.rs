//! Trains a second-order network that reads checkpoints and predicts which
//! task they were trained on, then saves and reloads it.
//!
//!     cargo run --release --example second_order -- [modelset_dir]

mod common;

use wsk::eval::{train_on_split, EvalSettings};
use wsk::second_order::{load_params, save_params, FrontEnd};
use wsk::store::{make_split, SplitMode};

fn main() -> wsk::Result<()> {
    let corpus = common::corpus()?;
    let settings = EvalSettings::default();
    let plan = make_split(&corpus.manifest, SplitMode::Classification, 0)?;
    let (params, curve) = train_on_split(&corpus, &plan, FrontEnd::ALIGNED, &settings.train, &settings, None)?;
    for (epoch, loss) in curve.iter().enumerate().step_by(10) {
        println!("epoch {:3}  loss {:.4}", epoch, loss);
    }
    println!("final loss {:.4}", curve.last().unwrap());

    let mut correct = 0;
    let test = plan.test_rows();
    for &row in &test {
        let ck = corpus.checkpoint(row)?;
        let fused = params.forward(ck, None)?.fused;
        if wsk::forge::argmax(&fused) == ck.task_id {
            correct += 1;
        }
    }
    println!("held-out checkpoints classified: {}/{}", correct, test.len());

    let path = std::env::temp_dir().join("wsk-second-order.wsk");
    save_params(&params, &path)?;
    assert_eq!(load_params(&path)?, params);
    println!("saved and reloaded {}", path.display());
    Ok(())
}
