//! Filter permutations that leave a network's function unchanged, and the
//! alignment that makes the second-order input blind to them.
//!
//!     cargo run --release --example symmetry -- [modelset_dir]

mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use wsk::align::{align_layer, order_chain_deviation, permute_checkpoint, random_permutations, AlignOptions};
use wsk::forge::sample_batch;
use wsk::Tensor;

fn main() -> wsk::Result<()> {
    let ms = common::modelset()?;
    let row = ms.manifest.admitted()[0];
    let ck = ms.load(row)?;
    let task = &ms.manifest.suite[ck.task_id];
    let images = sample_batch(task, 8, 3)?.images;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let perms = random_permutations(&ck, &mut rng);

    let compensated = order_chain_deviation(&ck, &images, &perms, true)?;
    let broken = order_chain_deviation(&ck, &images, &perms, false)?;
    println!("max logit change, next layer's channels permuted too: {:.2e}", compensated);
    println!("max logit change, filters permuted alone:            {:.2e}", broken);

    // the stored weights differ, the aligned representation does not
    let moved = permute_checkpoint(&ck, &perms, true)?;
    for l in 0..ck.num_conv_layers() {
        let theta = ck.conv_weight(l);
        let s = theta.shape();
        let phi = Tensor::from_fn(vec![4 * s[0], s[1], s[2], s[3]], |i| ((i * 7919) % 23) as f64 / 11.0 - 1.0)?;
        let raw_equal = moved.conv_weight(l) == theta;
        let a = align_layer(theta, &phi, l, AlignOptions::FULL)?;
        let b = align_layer(moved.conv_weight(l), &phi, l, AlignOptions::FULL)?;
        let n = align_layer(moved.conv_weight(l), &phi, l, AlignOptions::NONE)?;
        let u = align_layer(theta, &phi, l, AlignOptions::NONE)?;
        println!(
            "layer {}: raw weights equal {:5}  aligned equal {:5}  unaligned equal {:5}",
            l,
            raw_equal,
            a.values == b.values,
            n.values == u.values
        );
    }
    Ok(())
}
