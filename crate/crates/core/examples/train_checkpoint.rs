//! Trains a single first-order CNN on one synthetic task and checks it on
//! fresh images from the same task.
//!
//!     cargo run --release --example train_checkpoint -- [task_id]

use std::time::Instant;

use wsk::forge::{generate_task_suite, sample_batch, Network, TrainConfig};
use wsk::ArchDescriptor;

fn main() -> wsk::Result<()> {
    let task_id: usize = std::env::args().nth(1).map_or(0, |s| s.parse().expect("task id"));
    let suite = generate_task_suite(16, 7)?;
    let task = &suite[task_id];
    let arch = ArchDescriptor::desk_default();
    let config = TrainConfig::default();

    println!("task {}: {}", task.task_id, task.name());
    let start = Instant::now();
    let ck = wsk::forge::train_first_order(task, &arch, &config, 42)?;
    println!("trained in {:.1?}, train accuracy {:.3}", start.elapsed(), ck.train_accuracy);

    let held_out = sample_batch(task, 200, 9001)?;
    let net = Network::from_checkpoint(&ck)?;
    println!("held-out accuracy {:.3}", net.accuracy(&held_out.images, &held_out.labels)?);
    for l in 0..ck.num_conv_layers() {
        println!("conv {} weights {:?}", l, ck.conv_weight(l).shape());
    }
    Ok(())
}
