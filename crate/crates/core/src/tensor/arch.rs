use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of image channels every architecture consumes (RGB).
pub const IMAGE_CHANNELS: usize = 3;

/// One bias-free convolution layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_filters: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub relu: bool,
}

impl ConvSpec {
    pub fn filter_shape(&self) -> Vec<usize> {
        vec![self.out_filters, self.in_channels, self.kernel_h, self.kernel_w]
    }

    pub fn param_count(&self) -> usize {
        self.out_filters * self.in_channels * self.kernel_h * self.kernel_w
    }
}

/// A plain convolution chain followed by global average pooling and a dense
/// classifier from the last filter count to `n_classes`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub convs: Vec<ConvSpec>,
    pub n_classes: usize,
}

impl ArchDescriptor {
    /// conv(3→8) → conv(8→8) → conv(8→16), all 3×3 with padding 1 and ReLU,
    /// then GAP and dense(16→2).
    pub fn desk_default() -> Self {
        let conv = |i, o| ConvSpec {
            in_channels: i,
            out_filters: o,
            kernel_h: 3,
            kernel_w: 3,
            stride: 1,
            padding: 1,
            relu: true,
        };
        ArchDescriptor {
            convs: vec![conv(3, 8), conv(8, 8), conv(8, 16)],
            n_classes: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .convs
            .first()
            .ok_or_else(|| Error::UnsupportedArch("architecture has no conv layers".into()))?;
        if first.in_channels != IMAGE_CHANNELS {
            return Err(Error::UnsupportedArch(format!(
                "first conv consumes {} channels, images have {}",
                first.in_channels, IMAGE_CHANNELS
            )));
        }
        for (l, pair) in self.convs.windows(2).enumerate() {
            if pair[0].out_filters != pair[1].in_channels {
                return Err(Error::UnsupportedArch(format!(
                    "conv {} emits {} filters but conv {} expects {} channels",
                    l,
                    pair[0].out_filters,
                    l + 1,
                    pair[1].in_channels
                )));
            }
        }
        for (l, c) in self.convs.iter().enumerate() {
            if c.stride == 0 || c.kernel_h == 0 || c.kernel_w == 0 || c.out_filters == 0 {
                return Err(Error::UnsupportedArch(format!(
                    "conv {} has a zero extent or stride",
                    l
                )));
            }
        }
        if self.n_classes == 0 {
            return Err(Error::UnsupportedArch("dense tail has zero classes".into()));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.convs.last().map(|c| c.out_filters).unwrap_or(0)
    }

    pub fn conv_param_count(&self) -> usize {
        self.convs.iter().map(ConvSpec::param_count).sum()
    }

    pub fn param_count(&self) -> usize {
        self.conv_param_count() + self.feature_dim() * self.n_classes + self.n_classes
    }

    /// Spatial size after every conv, starting from a square `size × size` image.
    pub fn spatial_sizes(&self, size: usize) -> Result<Vec<(usize, usize)>> {
        let mut hw = (size, size);
        let mut out = Vec::with_capacity(self.convs.len());
        for (l, c) in self.convs.iter().enumerate() {
            let h = hw.0 + 2 * c.padding;
            let w = hw.1 + 2 * c.padding;
            if h < c.kernel_h || w < c.kernel_w {
                return Err(Error::UnsupportedArch(format!(
                    "conv {} kernel exceeds its padded {}x{} input",
                    l, h, w
                )));
            }
            hw = ((h - c.kernel_h) / c.stride + 1, (w - c.kernel_w) / c.stride + 1);
            out.push(hw);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_default_is_valid_chain() {
        let a = ArchDescriptor::desk_default();
        a.validate().unwrap();
        assert_eq!(a.conv_param_count(), 216 + 576 + 1152);
        assert_eq!(a.param_count(), 1944 + 32 + 2);
        assert_eq!(a.spatial_sizes(16).unwrap(), vec![(16, 16); 3]);
    }

    #[test]
    fn broken_chain_is_rejected() {
        let mut a = ArchDescriptor::desk_default();
        a.convs[1].in_channels = 4;
        assert!(matches!(a.validate(), Err(Error::UnsupportedArch(_))));
        let mut b = ArchDescriptor::desk_default();
        b.convs[0].in_channels = 1;
        assert!(b.validate().is_err());
    }
}
