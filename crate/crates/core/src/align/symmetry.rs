//! Executable check of the filter/channel order chain: permuting a layer's
//! filters and the next layer's input channels the same way leaves the
//! network function unchanged.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::forge::Network;
use crate::rng;
use crate::store::Checkpoint;
use crate::tensor::{is_permutation, Tensor};

/// One uniformly random permutation of each conv layer's filters.
pub fn random_permutations<R: Rng>(ck: &Checkpoint, rng: &mut R) -> Vec<Vec<usize>> {
    ck.arch
        .convs
        .iter()
        .map(|c| {
            let mut p: Vec<usize> = (0..c.out_filters).collect();
            p.shuffle(rng);
            p
        })
        .collect()
}

/// Reorders the filters of every conv layer `l` by `perms[l]`.
///
/// With `compensate`, the consumer of each layer (the next conv's channel
/// axis, or the dense layer's input axis after the last conv) is reordered
/// identically, which preserves the network's outputs.
pub fn permute_checkpoint(ck: &Checkpoint, perms: &[Vec<usize>], compensate: bool) -> Result<Checkpoint> {
    ck.validate()?;
    let n = ck.num_conv_layers();
    if perms.len() != n {
        return Err(Error::Precondition(format!(
            "{} permutations supplied for {} conv layers",
            perms.len(),
            n
        )));
    }
    for (l, p) in perms.iter().enumerate() {
        if !is_permutation(p, ck.arch.convs[l].out_filters) {
            return Err(Error::Precondition(format!(
                "permutation for layer {} is not a permutation of its {} filters",
                l, ck.arch.convs[l].out_filters
            )));
        }
    }
    let mut out = ck.clone();
    for l in 0..n {
        let mut w = ck.conv_weight(l).permute_axis(0, &perms[l])?;
        if compensate && l > 0 {
            w = w.permute_axis(1, &perms[l - 1])?;
        }
        *out.conv_weight_mut(l) = w;
    }
    if compensate {
        let fc_idx = n;
        out.tensors[fc_idx].1 = ck.fc_weight().permute_axis(1, &perms[n - 1])?;
    }
    Ok(out)
}

fn probe_images(probe: &Tensor) -> Result<Vec<Tensor>> {
    match probe.rank() {
        3 => Ok(vec![probe.clone()]),
        4 => {
            let s = probe.shape();
            Ok((0..s[0])
                .map(|i| Tensor::from_parts(s[1..].to_vec(), probe.slice0(i).to_vec()))
                .collect())
        }
        _ => Err(Error::shape(
            "check_order_chain",
            format!("probe must be (3,S,S) or (n,3,S,S), got {:?}", probe.shape()),
        )),
    }
}

/// Max absolute logit difference between `ck` and its permuted copy on `probe`.
pub fn order_chain_deviation(
    ck: &Checkpoint,
    probe: &Tensor,
    perms: &[Vec<usize>],
    compensate: bool,
) -> Result<f64> {
    ck.arch
        .validate()
        .map_err(|e| Error::UnsupportedArch(format!("not a plain conv chain: {}", e)))?;
    let original = Network::from_checkpoint(ck)?;
    let permuted = Network::from_checkpoint(&permute_checkpoint(ck, perms, compensate)?)?;
    let mut worst = 0.0f64;
    for img in probe_images(probe)? {
        let a = original.logits(&img)?;
        let b = permuted.logits(&img)?;
        for (x, y) in a.iter().zip(&b) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok(worst)
}

/// Samples compensated random permutations of every conv layer and returns
/// the max absolute logit deviation they cause on `probe` (ideally zero).
pub fn check_order_chain(ck: &Checkpoint, probe: &Tensor, seed: u64) -> Result<f64> {
    let mut r = rng::stream(seed, &[0x0DE4]);
    let perms = random_permutations(ck, &mut r);
    order_chain_deviation(ck, probe, &perms, true)
}
