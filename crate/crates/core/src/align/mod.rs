//! Alignment of checkpoint filters against learnable second-order filters.
//!
//! A layer's filters `theta (g, c, h, w)` are scored against second-order
//! filters `phi (g', c, h, w)`:
//!
//! * first layer: `S[i][j] = Σ_c ⟨theta[i][c], phi[j][c]⟩` (channel order is
//!   fixed by the RGB input);
//! * deeper layers: `S[i][j] = Σ_cj max_ci ⟨theta[i][ci], phi[j][cj]⟩`, which
//!   no longer depends on the order of theta's channels.
//!
//! Each column of `S` is then sorted in non-increasing order, which removes
//! the dependence on the order of theta's filters. The sorted matrix is the
//! branch representation; the argmax and sort indices are kept so gradients
//! can be routed back to `phi`.

mod symmetry;

pub use symmetry::{
    check_order_chain, order_chain_deviation, permute_checkpoint, random_permutations,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::IMAGE_CHANNELS;
use crate::tensor::ops::dot;
use crate::tensor::Tensor;

/// Which alignment steps a branch applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AlignOptions {
    /// Sort each score column (filter alignment).
    pub filter_align: bool,
    /// Max over theta's channels on layers after the first (channel alignment).
    pub channel_align: bool,
}

impl AlignOptions {
    pub const FULL: AlignOptions = AlignOptions {
        filter_align: true,
        channel_align: true,
    };
    pub const NONE: AlignOptions = AlignOptions {
        filter_align: false,
        channel_align: false,
    };
}

/// Raw score matrix of one layer plus the channel routing of the max.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentScores {
    pub layer: usize,
    /// Checkpoint filters `g`.
    pub n_filters: usize,
    /// Second-order filters `g'`.
    pub n_second: usize,
    pub n_channels: usize,
    /// Row-major `(g, g')`.
    pub scores: Vec<f64>,
    /// For channel-max scoring: winning theta channel for each `(i, j, cj)`,
    /// at `(i * g' + j) * c + cj`.
    pub channel_argmax: Option<Vec<u32>>,
}

impl AlignmentScores {
    pub fn get(&self, filter: usize, second: usize) -> f64 {
        self.scores[filter * self.n_second + second]
    }
}

/// Sort and channel routing needed to backpropagate through a [`BranchRepr`].
#[derive(Clone, Debug, PartialEq)]
pub struct Routing {
    pub channel_argmax: Option<Vec<u32>>,
    /// `permutations[j][rank]` is the theta filter placed at `rank` in column `j`.
    pub permutations: Vec<Vec<usize>>,
}

/// Aligned representation of one layer, flattened column-major: entry
/// `j * g + rank` is the `rank`-th largest score of second-order filter `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchRepr {
    pub layer: usize,
    pub n_filters: usize,
    pub n_second: usize,
    pub values: Vec<f64>,
    pub routing: Routing,
}

impl BranchRepr {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Column `j` of the representation.
    pub fn column(&self, j: usize) -> &[f64] {
        &self.values[j * self.n_filters..(j + 1) * self.n_filters]
    }
}

struct Dims {
    g: usize,
    gp: usize,
    c: usize,
    hw: usize,
}

fn check_pair(op: &'static str, theta: &Tensor, phi: &Tensor) -> Result<Dims> {
    if theta.rank() != 4 || phi.rank() != 4 {
        return Err(Error::shape(
            op,
            format!(
                "theta {:?} and phi {:?} must both be (filters, channels, h, w)",
                theta.shape(),
                phi.shape()
            ),
        ));
    }
    let (ts, ps) = (theta.shape(), phi.shape());
    if ts[1..] != ps[1..] {
        return Err(Error::shape(
            op,
            format!(
                "theta (c,h,w) = {:?} differs from phi (c,h,w) = {:?} on axes 1..4",
                &ts[1..],
                &ps[1..]
            ),
        ));
    }
    Ok(Dims {
        g: ts[0],
        gp: ps[0],
        c: ts[1],
        hw: ts[2] * ts[3],
    })
}

/// Scores with channel order preserved: `S[i][j] = Σ_c ⟨theta[i][c], phi[j][c]⟩`.
/// Used for the first layer and for any layer when channel alignment is off.
pub fn score_fixed_channels(theta: &Tensor, phi: &Tensor, layer: usize) -> Result<AlignmentScores> {
    let d = check_pair("score_fixed_channels", theta, phi)?;
    let (t, p) = (theta.data(), phi.data());
    let span = d.c * d.hw;
    let mut scores = Vec::with_capacity(d.g * d.gp);
    for i in 0..d.g {
        let ti = &t[i * span..(i + 1) * span];
        for j in 0..d.gp {
            let pj = &p[j * span..(j + 1) * span];
            let mut s = 0.0;
            for c in 0..d.c {
                s += dot(&ti[c * d.hw..(c + 1) * d.hw], &pj[c * d.hw..(c + 1) * d.hw]);
            }
            scores.push(s);
        }
    }
    Ok(AlignmentScores {
        layer,
        n_filters: d.g,
        n_second: d.gp,
        n_channels: d.c,
        scores,
        channel_argmax: None,
    })
}

/// First-layer scoring; theta must consume image channels.
pub fn score_first_layer(theta: &Tensor, phi: &Tensor) -> Result<AlignmentScores> {
    let d = check_pair("score_first_layer", theta, phi)?;
    if d.c != IMAGE_CHANNELS {
        return Err(Error::shape(
            "score_first_layer",
            format!(
                "first-layer filters have {} channels on axis 1, expected {}",
                d.c, IMAGE_CHANNELS
            ),
        ));
    }
    score_fixed_channels(theta, phi, 0)
}

/// Channel-max scoring: `S[i][j] = Σ_cj max_ci ⟨theta[i][ci], phi[j][cj]⟩`,
/// ties resolved to the lowest `ci`.
pub fn score_deep_layer(theta: &Tensor, phi: &Tensor, layer: usize) -> Result<AlignmentScores> {
    let d = check_pair("score_deep_layer", theta, phi)?;
    let (t, p) = (theta.data(), phi.data());
    let span = d.c * d.hw;
    let mut scores = Vec::with_capacity(d.g * d.gp);
    let mut argmax = Vec::with_capacity(d.g * d.gp * d.c);
    for i in 0..d.g {
        let ti = &t[i * span..(i + 1) * span];
        for j in 0..d.gp {
            let pj = &p[j * span..(j + 1) * span];
            let mut s = 0.0;
            for cj in 0..d.c {
                let target = &pj[cj * d.hw..(cj + 1) * d.hw];
                let mut best = dot(&ti[..d.hw], target);
                let mut best_ci = 0u32;
                for ci in 1..d.c {
                    let v = dot(&ti[ci * d.hw..(ci + 1) * d.hw], target);
                    if v > best {
                        best = v;
                        best_ci = ci as u32;
                    }
                }
                s += best;
                argmax.push(best_ci);
            }
            scores.push(s);
        }
    }
    Ok(AlignmentScores {
        layer,
        n_filters: d.g,
        n_second: d.gp,
        n_channels: d.c,
        scores,
        channel_argmax: Some(argmax),
    })
}

/// Dispatches on the layer position: layer 0 keeps RGB channel order, deeper
/// layers use channel-max unless channel alignment is disabled.
pub fn score_layer(
    theta: &Tensor,
    phi: &Tensor,
    layer: usize,
    options: AlignOptions,
) -> Result<AlignmentScores> {
    if layer == 0 {
        score_first_layer(theta, phi)
    } else if options.channel_align {
        score_deep_layer(theta, phi, layer)
    } else {
        score_fixed_channels(theta, phi, layer)
    }
}

/// Sorts each column of `S` in non-increasing order (ties: lower filter index first).
pub fn canonicalize(scores: &AlignmentScores) -> BranchRepr {
    canonicalize_with(scores, true)
}

/// As [`canonicalize`]; with `filter_align == false` the columns keep stored filter order.
pub fn canonicalize_with(scores: &AlignmentScores, filter_align: bool) -> BranchRepr {
    let (g, gp) = (scores.n_filters, scores.n_second);
    let mut values = Vec::with_capacity(g * gp);
    let mut permutations = Vec::with_capacity(gp);
    for j in 0..gp {
        let mut perm: Vec<usize> = (0..g).collect();
        if filter_align {
            perm.sort_by(|&a, &b| {
                scores
                    .get(b, j)
                    .total_cmp(&scores.get(a, j))
                    .then(a.cmp(&b))
            });
        }
        values.extend(perm.iter().map(|&i| scores.get(i, j)));
        permutations.push(perm);
    }
    BranchRepr {
        layer: scores.layer,
        n_filters: g,
        n_second: gp,
        values,
        routing: Routing {
            channel_argmax: scores.channel_argmax.clone(),
            permutations,
        },
    }
}

/// Scores and canonicalizes one layer.
pub fn align_layer(theta: &Tensor, phi: &Tensor, layer: usize, options: AlignOptions) -> Result<BranchRepr> {
    let scores = score_layer(theta, phi, layer, options)?;
    Ok(canonicalize_with(&scores, options.filter_align))
}

/// Smallest gap separating a winner from its runner-up anywhere in the
/// alignment of this layer: between the best and second-best channel product
/// (channel-max layers) and between adjacent sorted scores of a column.
///
/// Finite-difference checks need this to be well above the step size;
/// `f64::INFINITY` when there is nothing to compare.
pub fn tie_margin(theta: &Tensor, phi: &Tensor, layer: usize, options: AlignOptions) -> Result<f64> {
    let d = check_pair("tie_margin", theta, phi)?;
    let mut margin = f64::INFINITY;
    if layer > 0 && options.channel_align && d.c > 1 {
        let (t, p) = (theta.data(), phi.data());
        let span = d.c * d.hw;
        for i in 0..d.g {
            for j in 0..d.gp {
                for cj in 0..d.c {
                    let target = &p[j * span + cj * d.hw..j * span + (cj + 1) * d.hw];
                    let mut vals: Vec<f64> = (0..d.c)
                        .map(|ci| dot(&t[i * span + ci * d.hw..i * span + (ci + 1) * d.hw], target))
                        .collect();
                    vals.sort_by(|a, b| b.total_cmp(a));
                    margin = margin.min(vals[0] - vals[1]);
                }
            }
        }
    }
    if options.filter_align && d.g > 1 {
        let repr = align_layer(theta, phi, layer, options)?;
        for j in 0..d.gp {
            for w in repr.column(j).windows(2) {
                margin = margin.min(w[0] - w[1]);
            }
        }
    }
    Ok(margin)
}

/// Gradient of `⟨upstream, repr.values⟩` with respect to `phi`.
///
/// Gradient flows only to the recorded sort positions and winning channels
/// (a subgradient at ties); theta is a fixed input and receives none. The
/// routing record is first checked against `theta`/`phi` by recomputing every
/// score from it.
pub fn backprop_scores(repr: &BranchRepr, theta: &Tensor, phi: &Tensor, upstream: &[f64]) -> Result<Tensor> {
    let d = check_pair("backprop_scores", theta, phi)?;
    if d.g != repr.n_filters || d.gp != repr.n_second {
        return Err(Error::Consistency(format!(
            "representation is {}x{} but theta/phi give {}x{}",
            repr.n_filters, repr.n_second, d.g, d.gp
        )));
    }
    if upstream.len() != repr.values.len() {
        return Err(Error::shape(
            "backprop_scores",
            format!(
                "upstream has {} entries, representation has {}",
                upstream.len(),
                repr.values.len()
            ),
        ));
    }
    let routing = &repr.routing;
    if routing.permutations.len() != d.gp
        || routing
            .permutations
            .iter()
            .any(|p| !crate::tensor::is_permutation(p, d.g))
    {
        return Err(Error::Consistency("sort permutations are malformed".into()));
    }
    if let Some(am) = &routing.channel_argmax {
        if am.len() != d.g * d.gp * d.c || am.iter().any(|&ci| ci as usize >= d.c) {
            return Err(Error::Consistency("channel argmax record is malformed".into()));
        }
    }
    let (t, p) = (theta.data(), phi.data());
    let span = d.c * d.hw;
    let mut grad = vec![0.0; phi.len()];
    for j in 0..d.gp {
        let pj = &p[j * span..(j + 1) * span];
        let gj = &mut grad[j * span..(j + 1) * span];
        for (rank, &i) in routing.permutations[j].iter().enumerate() {
            let ti = &t[i * span..(i + 1) * span];
            let mut recomputed = 0.0;
            let up = upstream[j * d.g + rank];
            for cj in 0..d.c {
                let ci = match &routing.channel_argmax {
                    Some(am) => am[(i * d.gp + j) * d.c + cj] as usize,
                    None => cj,
                };
                let src = &ti[ci * d.hw..(ci + 1) * d.hw];
                recomputed += dot(src, &pj[cj * d.hw..(cj + 1) * d.hw]);
                if up != 0.0 {
                    for (g, x) in gj[cj * d.hw..(cj + 1) * d.hw].iter_mut().zip(src) {
                        *g += up * x;
                    }
                }
            }
            let stored = repr.values[j * d.g + rank];
            if recomputed.to_bits() != stored.to_bits() {
                return Err(Error::Consistency(format!(
                    "score ({}, {}) recomputes to {} but the representation holds {}",
                    i, j, recomputed, stored
                )));
            }
        }
    }
    Ok(Tensor::from_parts(phi.shape().to_vec(), grad))
}
