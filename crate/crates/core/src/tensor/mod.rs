//! Dense 64-bit tensors and the numerical kernels shared by the first-order
//! trainer and the second-order network.
//!
//! Layout is row-major with an explicit axis order: convolution filters are
//! `(filters, channels, height, width)` and feature maps are
//! `(channels, height, width)`. Convolution is cross-correlation (no kernel
//! flip).

mod arch;
pub(crate) mod ops;

pub use arch::{ArchDescriptor, ConvSpec, IMAGE_CHANNELS};
pub use ops::{
    conv2d, conv2d_grad, cross_entropy, cross_entropy_grad, dense, dense_grad, frobenius_inner,
    global_avg_pool, global_avg_pool_grad, relu, relu_grad, softmax, softmax_backward,
    softmax_cross_entropy_grad, ConvDims, ConvGeometry,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum rank supported by the kernels.
pub const MAX_RANK: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking extents, element count and finiteness.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        validate_shape(&shape)?;
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!(
                    "shape {:?} holds {} elements but {} were supplied",
                    shape,
                    expected,
                    data.len()
                ),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Contract(format!(
                "non-finite element {} at flat index {}",
                data[pos], pos
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        validate_shape(&shape)?;
        let n = shape.iter().product();
        Ok(Tensor {
            shape,
            data: vec![0.0; n],
        })
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> f64) -> Result<Self> {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(&mut f).collect())
    }

    /// Constructor used by kernels that have already established the invariants.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Number of elements in one slice along axis 0.
    pub fn stride0(&self) -> usize {
        self.shape[1..].iter().product()
    }

    /// Contiguous slice `self[i, ...]`.
    pub fn slice0(&self, i: usize) -> &[f64] {
        let s = self.stride0();
        &self.data[i * s..(i + 1) * s]
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        validate_shape(&shape)?;
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {:?}", self.shape, shape),
            ));
        }
        Ok(Tensor {
            shape,
            data: self.data,
        })
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        same_shape("max_abs_diff", self, other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn scale(&self, alpha: f64) -> Tensor {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|v| v * alpha).collect(),
        )
    }

    /// `alpha * self + beta * other`.
    pub fn axpby(&self, alpha: f64, other: &Tensor, beta: f64) -> Result<Tensor> {
        same_shape("axpby", self, other)?;
        Ok(Tensor::from_parts(
            self.shape.clone(),
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| alpha * a + beta * b)
                .collect(),
        ))
    }

    /// Reorders the tensor along `axis` so that output index `i` holds input
    /// index `perm[i]`.
    pub fn permute_axis(&self, axis: usize, perm: &[usize]) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(Error::shape(
                "permute_axis",
                format!("axis {} out of range for rank {}", axis, self.rank()),
            ));
        }
        let extent = self.shape[axis];
        if !is_permutation(perm, extent) {
            return Err(Error::shape(
                "permute_axis",
                format!("{:?} is not a permutation of 0..{}", perm, extent),
            ));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(self.data.len());
        for o in 0..outer {
            for &src in perm {
                let start = (o * extent + src) * inner;
                data.extend_from_slice(&self.data[start..start + inner]);
            }
        }
        Ok(Tensor::from_parts(self.shape.clone(), data))
    }
}

pub(crate) fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(Error::shape(
            "shape",
            format!("rank {} outside 1..={}", shape.len(), MAX_RANK),
        ));
    }
    if let Some(axis) = shape.iter().position(|&e| e == 0) {
        return Err(Error::shape(
            "shape",
            format!("extent of axis {} is zero in {:?}", axis, shape),
        ));
    }
    Ok(())
}

pub(crate) fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::shape(
            op,
            format!("operands have shapes {:?} and {:?}", a.shape, b.shape),
        ));
    }
    Ok(())
}

pub fn is_permutation(perm: &[usize], n: usize) -> bool {
    if perm.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || seen[p] {
            return false;
        }
        seen[p] = true;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![0, 2], vec![]).is_err());
        assert!(Tensor::new(vec![1], vec![f64::NAN]).is_err());
        assert!(Tensor::new(vec![1, 1, 1, 1, 1], vec![1.0]).is_err());
    }

    #[test]
    fn permute_axis_moves_slices() {
        let t = Tensor::from_fn(vec![3, 2], |i| i as f64).unwrap();
        let p = t.permute_axis(0, &[2, 0, 1]).unwrap();
        assert_eq!(p.data(), &[4.0, 5.0, 0.0, 1.0, 2.0, 3.0]);
        let q = t.permute_axis(1, &[1, 0]).unwrap();
        assert_eq!(q.data(), &[1.0, 0.0, 3.0, 2.0, 5.0, 4.0]);
        assert!(t.permute_axis(0, &[0, 0, 1]).is_err());
    }
}
