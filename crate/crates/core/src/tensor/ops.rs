use super::{same_shape, Tensor};
use crate::error::{Error, Result};

/// Stride and zero padding of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub const UNIT: ConvGeometry = ConvGeometry {
        stride: 1,
        padding: 0,
    };

    pub fn new(stride: usize, padding: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Precondition("conv stride must be >= 1".into()));
        }
        Ok(ConvGeometry { stride, padding })
    }

    pub fn output_extent(&self, input: usize, kernel: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        (padded >= kernel).then(|| (padded - kernel) / self.stride + 1)
    }
}

/// Resolved extents of one conv call.
#[derive(Clone, Copy, Debug)]
pub struct ConvDims {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub geom: ConvGeometry,
}

impl ConvDims {
    pub fn resolve(input: &[usize], filters: &[usize], geom: ConvGeometry) -> Result<Self> {
        if input.len() != 3 {
            return Err(Error::shape(
                "conv2d",
                format!("input must be (c,H,W), got {:?}", input),
            ));
        }
        if filters.len() != 4 {
            return Err(Error::shape(
                "conv2d",
                format!("filters must be (g,c,h,w), got {:?}", filters),
            ));
        }
        if geom.stride == 0 {
            return Err(Error::Precondition("conv stride must be >= 1".into()));
        }
        if input[0] != filters[1] {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "input channel axis (0) has {} but filter channel axis (1) has {}",
                    input[0], filters[1]
                ),
            ));
        }
        let out_h = geom.output_extent(input[1], filters[2]).ok_or_else(|| {
            Error::shape(
                "conv2d",
                format!(
                    "kernel height (axis 2) {} exceeds padded input height {}",
                    filters[2],
                    input[1] + 2 * geom.padding
                ),
            )
        })?;
        let out_w = geom.output_extent(input[2], filters[3]).ok_or_else(|| {
            Error::shape(
                "conv2d",
                format!(
                    "kernel width (axis 3) {} exceeds padded input width {}",
                    filters[3],
                    input[2] + 2 * geom.padding
                ),
            )
        })?;
        Ok(ConvDims {
            channels: input[0],
            height: input[1],
            width: input[2],
            filters: filters[0],
            kernel_h: filters[2],
            kernel_w: filters[3],
            out_h,
            out_w,
            geom,
        })
    }

    pub fn output_len(&self) -> usize {
        self.filters * self.out_h * self.out_w
    }

    /// Output columns `ox` whose source column `ox*stride + k - pad` lies inside the input.
    #[inline]
    fn valid_cols(&self, k: usize) -> (usize, usize) {
        valid_range(self.out_w, self.width, k, self.geom)
    }

    #[inline]
    fn valid_rows(&self, k: usize) -> (usize, usize) {
        valid_range(self.out_h, self.height, k, self.geom)
    }
}

#[inline]
fn valid_range(out: usize, input: usize, k: usize, geom: ConvGeometry) -> (usize, usize) {
    let s = geom.stride;
    let p = geom.padding;
    // first o with o*s + k >= p
    let lo = if k >= p { 0 } else { (p - k).div_ceil(s) };
    // last o with o*s + k - p <= input - 1
    let hi = if input + p > k {
        ((input + p - k - 1) / s + 1).min(out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Cross-correlation on raw slices; `out` is overwritten.
pub(crate) fn conv2d_slices(d: &ConvDims, input: &[f64], filters: &[f64], out: &mut [f64]) {
    let s = d.geom.stride;
    let p = d.geom.padding;
    let plane = d.out_h * d.out_w;
    out.fill(0.0);
    for g in 0..d.filters {
        let out_g = &mut out[g * plane..(g + 1) * plane];
        for c in 0..d.channels {
            let in_c = &input[c * d.height * d.width..(c + 1) * d.height * d.width];
            for kh in 0..d.kernel_h {
                let (oy0, oy1) = d.valid_rows(kh);
                for kw in 0..d.kernel_w {
                    let wv = filters[((g * d.channels + c) * d.kernel_h + kh) * d.kernel_w + kw];
                    let (ox0, ox1) = d.valid_cols(kw);
                    if ox0 >= ox1 {
                        continue;
                    }
                    for oy in oy0..oy1 {
                        let iy = oy * s + kh - p;
                        let row_in = &in_c[iy * d.width..(iy + 1) * d.width];
                        let row_out = &mut out_g[oy * d.out_w..(oy + 1) * d.out_w];
                        if s == 1 {
                            let off = ox0 + kw - p;
                            let src = &row_in[off..off + (ox1 - ox0)];
                            for (o, x) in row_out[ox0..ox1].iter_mut().zip(src) {
                                *o += wv * x;
                            }
                        } else {
                            for ox in ox0..ox1 {
                                row_out[ox] += wv * row_in[ox * s + kw - p];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of `conv2d_slices` output contracted with `upstream`. Either
/// destination may be skipped. Both destinations are overwritten.
pub(crate) fn conv2d_grad_slices(
    d: &ConvDims,
    input: &[f64],
    filters: &[f64],
    upstream: &[f64],
    grad_input: Option<&mut [f64]>,
    grad_filters: Option<&mut [f64]>,
) {
    let s = d.geom.stride;
    let p = d.geom.padding;
    let plane = d.out_h * d.out_w;
    let in_plane = d.height * d.width;
    if let Some(gf) = grad_filters {
        gf.fill(0.0);
        for g in 0..d.filters {
            let up_g = &upstream[g * plane..(g + 1) * plane];
            for c in 0..d.channels {
                let in_c = &input[c * in_plane..(c + 1) * in_plane];
                for kh in 0..d.kernel_h {
                    let (oy0, oy1) = d.valid_rows(kh);
                    for kw in 0..d.kernel_w {
                        let (ox0, ox1) = d.valid_cols(kw);
                        let mut acc = 0.0;
                        if ox0 < ox1 {
                            for oy in oy0..oy1 {
                                let iy = oy * s + kh - p;
                                let row_in = &in_c[iy * d.width..(iy + 1) * d.width];
                                let row_up = &up_g[oy * d.out_w..(oy + 1) * d.out_w];
                                if s == 1 {
                                    let off = ox0 + kw - p;
                                    let src = &row_in[off..off + (ox1 - ox0)];
                                    acc += row_up[ox0..ox1]
                                        .iter()
                                        .zip(src)
                                        .map(|(u, x)| u * x)
                                        .sum::<f64>();
                                } else {
                                    for ox in ox0..ox1 {
                                        acc += row_up[ox] * row_in[ox * s + kw - p];
                                    }
                                }
                            }
                        }
                        gf[((g * d.channels + c) * d.kernel_h + kh) * d.kernel_w + kw] = acc;
                    }
                }
            }
        }
    }
    if let Some(gi) = grad_input {
        gi.fill(0.0);
        for g in 0..d.filters {
            let up_g = &upstream[g * plane..(g + 1) * plane];
            for c in 0..d.channels {
                let gi_c = &mut gi[c * in_plane..(c + 1) * in_plane];
                for kh in 0..d.kernel_h {
                    let (oy0, oy1) = d.valid_rows(kh);
                    for kw in 0..d.kernel_w {
                        let wv = filters[((g * d.channels + c) * d.kernel_h + kh) * d.kernel_w + kw];
                        let (ox0, ox1) = d.valid_cols(kw);
                        if ox0 >= ox1 {
                            continue;
                        }
                        for oy in oy0..oy1 {
                            let iy = oy * s + kh - p;
                            let row_up = &up_g[oy * d.out_w..(oy + 1) * d.out_w];
                            let row_gi = &mut gi_c[iy * d.width..(iy + 1) * d.width];
                            if s == 1 {
                                let off = ox0 + kw - p;
                                let dst = &mut row_gi[off..off + (ox1 - ox0)];
                                for (o, u) in dst.iter_mut().zip(&row_up[ox0..ox1]) {
                                    *o += wv * u;
                                }
                            } else {
                                for ox in ox0..ox1 {
                                    row_gi[ox * s + kw - p] += wv * row_up[ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Unfolds the input into a `(c·kh·kw, out_h·out_w)` patch matrix; padded
/// positions are zero.
pub(crate) fn im2col(d: &ConvDims, input: &[f64], cols: &mut Vec<f64>) {
    let s = d.geom.stride;
    let p = d.geom.padding;
    let plane = d.out_h * d.out_w;
    cols.clear();
    cols.resize(d.channels * d.kernel_h * d.kernel_w * plane, 0.0);
    let mut k = 0;
    for c in 0..d.channels {
        let in_c = &input[c * d.height * d.width..(c + 1) * d.height * d.width];
        for kh in 0..d.kernel_h {
            let (oy0, oy1) = d.valid_rows(kh);
            for kw in 0..d.kernel_w {
                let (ox0, ox1) = d.valid_cols(kw);
                let row = &mut cols[k * plane..(k + 1) * plane];
                if ox0 < ox1 {
                    for oy in oy0..oy1 {
                        let iy = oy * s + kh - p;
                        let src = &in_c[iy * d.width..(iy + 1) * d.width];
                        let dst = &mut row[oy * d.out_w..(oy + 1) * d.out_w];
                        for ox in ox0..ox1 {
                            dst[ox] = src[ox * s + kw - p];
                        }
                    }
                }
                k += 1;
            }
        }
    }
}

/// Scatter-adds a patch-matrix gradient back onto the input; `grad_input` is overwritten.
pub(crate) fn col2im(d: &ConvDims, cols: &[f64], grad_input: &mut [f64]) {
    let s = d.geom.stride;
    let p = d.geom.padding;
    let plane = d.out_h * d.out_w;
    grad_input.fill(0.0);
    let mut k = 0;
    for c in 0..d.channels {
        let gi_c = &mut grad_input[c * d.height * d.width..(c + 1) * d.height * d.width];
        for kh in 0..d.kernel_h {
            let (oy0, oy1) = d.valid_rows(kh);
            for kw in 0..d.kernel_w {
                let (ox0, ox1) = d.valid_cols(kw);
                let row = &cols[k * plane..(k + 1) * plane];
                if ox0 < ox1 {
                    for oy in oy0..oy1 {
                        let iy = oy * s + kh - p;
                        let dst = &mut gi_c[iy * d.width..(iy + 1) * d.width];
                        let src = &row[oy * d.out_w..(oy + 1) * d.out_w];
                        for ox in ox0..ox1 {
                            dst[ox * s + kw - p] += src[ox];
                        }
                    }
                }
                k += 1;
            }
        }
    }
}

/// Convolution as `filters (g, K) × cols (K, P)`; `out` is overwritten.
pub(crate) fn conv2d_cols(d: &ConvDims, cols: &[f64], filters: &[f64], out: &mut [f64]) {
    let plane = d.out_h * d.out_w;
    let kk = d.channels * d.kernel_h * d.kernel_w;
    out.fill(0.0);
    for g in 0..d.filters {
        let out_g = &mut out[g * plane..(g + 1) * plane];
        let w_g = &filters[g * kk..(g + 1) * kk];
        for (k, &wv) in w_g.iter().enumerate() {
            let row = &cols[k * plane..(k + 1) * plane];
            for (o, x) in out_g.iter_mut().zip(row) {
                *o += wv * x;
            }
        }
    }
}

/// Backward of [`conv2d_cols`]: filter gradient (overwritten) and optionally
/// the patch-matrix gradient (overwritten).
pub(crate) fn conv2d_cols_grad(
    d: &ConvDims,
    cols: &[f64],
    filters: &[f64],
    upstream: &[f64],
    grad_filters: &mut [f64],
    grad_cols: Option<&mut Vec<f64>>,
) {
    let plane = d.out_h * d.out_w;
    let kk = d.channels * d.kernel_h * d.kernel_w;
    for g in 0..d.filters {
        let up_g = &upstream[g * plane..(g + 1) * plane];
        for k in 0..kk {
            grad_filters[g * kk + k] = dot(up_g, &cols[k * plane..(k + 1) * plane]);
        }
    }
    if let Some(gc) = grad_cols {
        gc.clear();
        gc.resize(kk * plane, 0.0);
        for g in 0..d.filters {
            let up_g = &upstream[g * plane..(g + 1) * plane];
            for k in 0..kk {
                let wv = filters[g * kk + k];
                for (o, u) in gc[k * plane..(k + 1) * plane].iter_mut().zip(up_g) {
                    *o += wv * u;
                }
            }
        }
    }
}

fn ensure_finite(op: &str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Contract(format!("{} produced a non-finite value", op)))
    }
}

/// Cross-correlation of a `(c,H,W)` input with `(g,c,h,w)` filters.
/// Output channel `g` is produced by filter `g` alone.
pub fn conv2d(input: &Tensor, filters: &Tensor, geom: ConvGeometry) -> Result<Tensor> {
    let d = ConvDims::resolve(input.shape(), filters.shape(), geom)?;
    let mut out = vec![0.0; d.output_len()];
    conv2d_slices(&d, input.data(), filters.data(), &mut out);
    ensure_finite("conv2d", &out)?;
    Ok(Tensor::from_parts(vec![d.filters, d.out_h, d.out_w], out))
}

/// Returns `(grad_input, grad_filters)` of `conv2d` contracted with `upstream`.
pub fn conv2d_grad(
    input: &Tensor,
    filters: &Tensor,
    geom: ConvGeometry,
    upstream: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let d = ConvDims::resolve(input.shape(), filters.shape(), geom)?;
    let expected = [d.filters, d.out_h, d.out_w];
    if upstream.shape() != expected {
        return Err(Error::shape(
            "conv2d_grad",
            format!(
                "upstream gradient has shape {:?}, conv output is {:?}",
                upstream.shape(),
                expected
            ),
        ));
    }
    let mut gi = vec![0.0; input.len()];
    let mut gf = vec![0.0; filters.len()];
    conv2d_grad_slices(
        &d,
        input.data(),
        filters.data(),
        upstream.data(),
        Some(&mut gi),
        Some(&mut gf),
    );
    ensure_finite("conv2d_grad", &gi)?;
    ensure_finite("conv2d_grad", &gf)?;
    Ok((
        Tensor::from_parts(input.shape().to_vec(), gi),
        Tensor::from_parts(filters.shape().to_vec(), gf),
    ))
}

/// Sum of elementwise products of two equal-shape tensors.
pub fn frobenius_inner(a: &Tensor, b: &Tensor) -> Result<f64> {
    same_shape("frobenius_inner", a, b)?;
    Ok(dot(a.data(), b.data()))
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_dense(input: &[f64], weights: &Tensor) -> Result<(usize, usize)> {
    if weights.rank() != 2 {
        return Err(Error::shape(
            "dense",
            format!("weights must be (out,in), got {:?}", weights.shape()),
        ));
    }
    let (out, inp) = (weights.shape()[0], weights.shape()[1]);
    if input.len() != inp {
        return Err(Error::shape(
            "dense",
            format!(
                "input length {} does not match weight axis 1 extent {}",
                input.len(),
                inp
            ),
        ));
    }
    Ok((out, inp))
}

/// `weights · input + bias` with weights laid out `(out, in)`.
pub fn dense(input: &[f64], weights: &Tensor, bias: &[f64]) -> Result<Vec<f64>> {
    let (out, inp) = check_dense(input, weights)?;
    if bias.len() != out {
        return Err(Error::shape(
            "dense",
            format!(
                "bias length {} does not match weight axis 0 extent {}",
                bias.len(),
                out
            ),
        ));
    }
    let w = weights.data();
    Ok((0..out)
        .map(|o| dot(&w[o * inp..(o + 1) * inp], input) + bias[o])
        .collect())
}

/// Returns `(grad_input, grad_weights, grad_bias)`.
pub fn dense_grad(
    input: &[f64],
    weights: &Tensor,
    upstream: &[f64],
) -> Result<(Vec<f64>, Tensor, Vec<f64>)> {
    let (out, inp) = check_dense(input, weights)?;
    if upstream.len() != out {
        return Err(Error::shape(
            "dense_grad",
            format!("upstream length {} but layer has {} outputs", upstream.len(), out),
        ));
    }
    let w = weights.data();
    let mut gi = vec![0.0; inp];
    let mut gw = vec![0.0; out * inp];
    for o in 0..out {
        let u = upstream[o];
        let row = &w[o * inp..(o + 1) * inp];
        for (g, wv) in gi.iter_mut().zip(row) {
            *g += u * wv;
        }
        for (g, x) in gw[o * inp..(o + 1) * inp].iter_mut().zip(input) {
            *g = u * x;
        }
    }
    Ok((gi, Tensor::from_parts(vec![out, inp], gw), upstream.to_vec()))
}

pub fn relu(t: &Tensor) -> Tensor {
    Tensor::from_parts(
        t.shape().to_vec(),
        t.data().iter().map(|&v| v.max(0.0)).collect(),
    )
}

/// Passes gradient where the forward input was strictly positive.
pub fn relu_grad(input: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    same_shape("relu_grad", input, upstream)?;
    Ok(Tensor::from_parts(
        input.shape().to_vec(),
        input
            .data()
            .iter()
            .zip(upstream.data())
            .map(|(&x, &u)| if x > 0.0 { u } else { 0.0 })
            .collect(),
    ))
}

/// Mean over the spatial axes of a `(c,H,W)` map.
pub fn global_avg_pool(t: &Tensor) -> Result<Vec<f64>> {
    if t.rank() != 3 {
        return Err(Error::shape(
            "global_avg_pool",
            format!("input must be (c,H,W), got {:?}", t.shape()),
        ));
    }
    let n = (t.shape()[1] * t.shape()[2]) as f64;
    Ok((0..t.shape()[0])
        .map(|c| t.slice0(c).iter().sum::<f64>() / n)
        .collect())
}

pub fn global_avg_pool_grad(shape: &[usize], upstream: &[f64]) -> Result<Tensor> {
    if shape.len() != 3 || upstream.len() != shape[0] {
        return Err(Error::shape(
            "global_avg_pool_grad",
            format!(
                "map shape {:?} incompatible with {} upstream values",
                shape,
                upstream.len()
            ),
        ));
    }
    let plane = shape[1] * shape[2];
    let n = plane as f64;
    let mut data = Vec::with_capacity(shape[0] * plane);
    for &u in upstream {
        data.extend(std::iter::repeat_n(u / n, plane));
    }
    Ok(Tensor::from_parts(shape.to_vec(), data))
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Vector-Jacobian product of softmax: `q ⊙ (u − ⟨u, q⟩)`.
pub fn softmax_backward(probs: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
    if probs.len() != upstream.len() {
        return Err(Error::shape(
            "softmax_backward",
            format!("{} probs vs {} upstream values", probs.len(), upstream.len()),
        ));
    }
    let inner = dot(probs, upstream);
    Ok(probs
        .iter()
        .zip(upstream)
        .map(|(q, u)| q * (u - inner))
        .collect())
}

fn check_distribution(op: &'static str, probs: &[f64], target: &[f64]) -> Result<()> {
    if probs.len() != target.len() {
        return Err(Error::shape(
            op,
            format!("{} probs vs {} target entries", probs.len(), target.len()),
        ));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-6 || probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Contract(format!(
            "{} expects a probability vector, entries sum to {}",
            op, total
        )));
    }
    Ok(())
}

/// `−Σ yᵢ ln pᵢ`; zero-weight targets contribute nothing.
pub fn cross_entropy(probs: &[f64], target: &[f64]) -> Result<f64> {
    check_distribution("cross_entropy", probs, target)?;
    let loss: f64 = -probs
        .iter()
        .zip(target)
        .filter(|(_, &y)| y != 0.0)
        .map(|(p, y)| y * p.ln())
        .sum::<f64>();
    if !loss.is_finite() {
        return Err(Error::Contract(
            "cross_entropy: target class has zero probability".into(),
        ));
    }
    Ok(loss)
}

/// Gradient of `cross_entropy` with respect to the probabilities.
pub fn cross_entropy_grad(probs: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    check_distribution("cross_entropy_grad", probs, target)?;
    Ok(probs
        .iter()
        .zip(target)
        .map(|(p, y)| if *y == 0.0 { 0.0 } else { -y / p })
        .collect())
}

/// Gradient of `cross_entropy(softmax(z), y)` with respect to the logits `z`.
pub fn softmax_cross_entropy_grad(probs: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    check_distribution("softmax_cross_entropy_grad", probs, target)?;
    Ok(probs.iter().zip(target).map(|(p, y)| p - y).collect())
}
