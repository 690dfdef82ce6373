//! Forward and backward passes of the first-order conv chain.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::store::{conv_name, Checkpoint, FC_BIAS, FC_WEIGHT};
use crate::tensor::ops::{col2im, conv2d_cols, conv2d_cols_grad, dot, im2col, ConvDims};
use crate::tensor::{softmax, ArchDescriptor, ConvGeometry, Tensor};

/// Mutable parameter set of a first-order network.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub arch: ArchDescriptor,
    pub convs: Vec<Tensor>,
    pub fc_weight: Tensor,
    pub fc_bias: Vec<f64>,
}

/// Activations kept for backprop.
#[derive(Clone, Debug, Default)]
pub struct Trace {
    /// Conv outputs before the activation, per layer.
    pub pre: Vec<Vec<f64>>,
    /// Layer inputs after the activation, per layer (index 0 holds layer 0's output).
    pub post: Vec<Vec<f64>>,
    pub features: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    /// Unfolded input patches per layer.
    pub cols: Vec<Vec<f64>>,
}

/// Parameter gradients with the same layout as [`Network`].
#[derive(Clone, Debug)]
pub struct Gradients {
    pub convs: Vec<Vec<f64>>,
    pub fc_weight: Vec<f64>,
    pub fc_bias: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients {
            convs: net.convs.iter().map(|t| vec![0.0; t.len()]).collect(),
            fc_weight: vec![0.0; net.fc_weight.len()],
            fc_bias: vec![0.0; net.fc_bias.len()],
        }
    }

    pub fn clear(&mut self) {
        for g in &mut self.convs {
            g.fill(0.0);
        }
        self.fc_weight.fill(0.0);
        self.fc_bias.fill(0.0);
    }
}

impl Network {
    /// Zero-mean Gaussian init with std `1/sqrt(fan_in)` per layer; zero bias.
    pub fn init<R: Rng>(arch: &ArchDescriptor, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let mut gauss = |shape: Vec<usize>, fan_in: usize| -> Result<Tensor> {
            let d = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt())
                .map_err(|e| Error::Precondition(e.to_string()))?;
            Tensor::from_fn(shape, |_| d.sample(rng))
        };
        let convs = arch
            .convs
            .iter()
            .map(|c| gauss(c.filter_shape(), c.in_channels * c.kernel_h * c.kernel_w))
            .collect::<Result<Vec<_>>>()?;
        let fc_weight = gauss(vec![arch.n_classes, arch.feature_dim()], arch.feature_dim())?;
        Ok(Network {
            arch: arch.clone(),
            convs,
            fc_weight,
            fc_bias: vec![0.0; arch.n_classes],
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.validate()?;
        let l = ck.num_conv_layers();
        Ok(Network {
            arch: ck.arch.clone(),
            convs: (0..l).map(|i| ck.conv_weight(i).clone()).collect(),
            fc_weight: ck.fc_weight().clone(),
            fc_bias: ck.fc_bias().data().to_vec(),
        })
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self
            .convs
            .iter()
            .enumerate()
            .map(|(l, t)| (conv_name(l), t.clone()))
            .collect();
        out.push((FC_WEIGHT.into(), self.fc_weight.clone()));
        out.push((
            FC_BIAS.into(),
            Tensor::from_parts(vec![self.fc_bias.len()], self.fc_bias.clone()),
        ));
        out
    }

    pub fn dims(&self, image_size: usize) -> Result<Vec<ConvDims>> {
        let mut shape = vec![self.arch.convs[0].in_channels, image_size, image_size];
        let mut out = Vec::with_capacity(self.convs.len());
        for (c, w) in self.arch.convs.iter().zip(&self.convs) {
            let d = ConvDims::resolve(&shape, w.shape(), ConvGeometry::new(c.stride, c.padding)?)?;
            shape = vec![d.filters, d.out_h, d.out_w];
            out.push(d);
        }
        Ok(out)
    }

    /// Runs one `(3, S, S)` image through the network.
    pub fn forward(&self, dims: &[ConvDims], image: &[f64], trace: &mut Trace) {
        trace.pre.resize(dims.len(), Vec::new());
        trace.post.resize(dims.len(), Vec::new());
        trace.cols.resize(dims.len(), Vec::new());
        for (l, d) in dims.iter().enumerate() {
            let mut pre = std::mem::take(&mut trace.pre[l]);
            pre.resize(d.output_len(), 0.0);
            {
                let input: &[f64] = if l == 0 { image } else { &trace.post[l - 1] };
                im2col(d, input, &mut trace.cols[l]);
            }
            conv2d_cols(d, &trace.cols[l], self.convs[l].data(), &mut pre);
            let post = &mut trace.post[l];
            post.clear();
            if self.arch.convs[l].relu {
                post.extend(pre.iter().map(|&v| v.max(0.0)));
            } else {
                post.extend_from_slice(&pre);
            }
            trace.pre[l] = pre;
        }
        let last = dims.last().expect("validated arch has conv layers");
        let plane = last.out_h * last.out_w;
        let top = &trace.post[dims.len() - 1];
        trace.features.clear();
        trace
            .features
            .extend((0..last.filters).map(|c| top[c * plane..(c + 1) * plane].iter().sum::<f64>() / plane as f64));
        let inp = self.fc_weight.shape()[1];
        let w = self.fc_weight.data();
        trace.logits.clear();
        trace.logits.extend(
            self.fc_bias
                .iter()
                .enumerate()
                .map(|(o, b)| dot(&w[o * inp..(o + 1) * inp], &trace.features) + b),
        );
        trace.probs = softmax(&trace.logits);
    }

    /// Accumulates parameter gradients for one image given `d loss / d logits`.
    pub fn backward(
        &self,
        dims: &[ConvDims],
        trace: &Trace,
        grad_logits: &[f64],
        grads: &mut Gradients,
    ) {
        let inp = self.fc_weight.shape()[1];
        let w = self.fc_weight.data();
        let mut grad_feat = vec![0.0; inp];
        for (o, &g) in grad_logits.iter().enumerate() {
            grads.fc_bias[o] += g;
            let row = &w[o * inp..(o + 1) * inp];
            for i in 0..inp {
                grads.fc_weight[o * inp + i] += g * trace.features[i];
                grad_feat[i] += g * row[i];
            }
        }
        let last = dims.last().expect("validated arch has conv layers");
        let plane = last.out_h * last.out_w;
        let mut upstream: Vec<f64> = grad_feat
            .iter()
            .flat_map(|&g| std::iter::repeat_n(g / plane as f64, plane))
            .collect();
        let mut scratch = Vec::new();
        let mut grad_cols = Vec::new();
        for l in (0..dims.len()).rev() {
            if self.arch.convs[l].relu {
                for (u, &p) in upstream.iter_mut().zip(&trace.pre[l]) {
                    if p <= 0.0 {
                        *u = 0.0;
                    }
                }
            }
            scratch.resize(self.convs[l].len(), 0.0);
            conv2d_cols_grad(
                &dims[l],
                &trace.cols[l],
                self.convs[l].data(),
                &upstream,
                &mut scratch,
                (l > 0).then_some(&mut grad_cols),
            );
            for (g, s) in grads.convs[l].iter_mut().zip(&scratch) {
                *g += s;
            }
            if l > 0 {
                upstream.resize(trace.post[l - 1].len(), 0.0);
                col2im(&dims[l], &grad_cols, &mut upstream);
            }
        }
    }

    pub fn logits(&self, image: &Tensor) -> Result<Vec<f64>> {
        let s = image.shape();
        if s.len() != 3 || s[1] != s[2] || s[0] != self.arch.convs[0].in_channels {
            return Err(Error::shape(
                "Network::logits",
                format!("expected a square (3,S,S) image, got {:?}", s),
            ));
        }
        let dims = self.dims(s[1])?;
        let mut trace = Trace::default();
        self.forward(&dims, image.data(), &mut trace);
        Ok(trace.logits)
    }

    /// Global-average-pooled features for every image of a `(n,3,S,S)` batch.
    pub fn batch_features(&self, images: &Tensor) -> Result<Vec<Vec<f64>>> {
        let s = images.shape();
        if s.len() != 4 || s[2] != s[3] {
            return Err(Error::shape(
                "Network::batch_features",
                format!("expected (n,3,S,S) images, got {:?}", s),
            ));
        }
        let dims = self.dims(s[2])?;
        let mut trace = Trace::default();
        Ok((0..s[0])
            .map(|i| {
                self.forward(&dims, images.slice0(i), &mut trace);
                trace.features.clone()
            })
            .collect())
    }

    /// Fraction of images whose arg-max logit equals the label.
    pub fn accuracy(&self, images: &Tensor, labels: &[usize]) -> Result<f64> {
        let s = images.shape();
        let dims = self.dims(s[2])?;
        let mut trace = Trace::default();
        let mut correct = 0usize;
        for (i, &y) in labels.iter().enumerate() {
            self.forward(&dims, images.slice0(i), &mut trace);
            if argmax(&trace.logits) == y {
                correct += 1;
            }
        }
        Ok(correct as f64 / labels.len().max(1) as f64)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
