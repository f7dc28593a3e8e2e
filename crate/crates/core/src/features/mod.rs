//! Feature extraction: self-similarity descriptors and weighted one-hot
//! encodings of segmentations.

use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::volume::{Dims, Spacing, Volume3D};

mod mind;
mod onehot;

pub use mind::{channel_offsets, mind_ssc, MindConfig, CHANNEL_PAIRS, MIND_CHANNELS, NEIGHBOURS};
pub use onehot::{class_weights, seg_onehot_features};

/// Multi-channel feature grid, channel index slowest-varying.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVolume {
    dims: Dims,
    spacing: Spacing,
    channels: usize,
    data: Vec<f32>,
}

impl FeatureVolume {
    pub fn new(dims: Dims, spacing: Spacing, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || dims.is_empty() {
            bail!(InvalidVolume, "feature volume needs at least one channel and voxel");
        }
        if data.len() != dims.len() * channels {
            bail!(
                ShapeMismatch,
                "expected {} feature values, got {}",
                dims.len() * channels,
                data.len()
            );
        }
        if data.iter().any(|v| !v.is_finite()) {
            bail!(InvalidVolume, "non-finite feature value");
        }
        Ok(Self { dims, spacing, channels, data })
    }

    /// Wraps a scalar volume as a one-channel feature volume.
    pub fn from_volume(vol: &Volume3D) -> Self {
        Self { dims: vol.dims(), spacing: vol.spacing(), channels: 1, data: vol.data().to_vec() }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.dims.len();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn at(&self, c: usize, x: usize, y: usize, z: usize) -> f32 {
        self.data[c * self.dims.len() + self.dims.index(x, y, z)]
    }

    /// Reorders channels so that output channel `i` is input channel `order[i]`.
    pub fn permute_channels(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.channels {
            bail!(ShapeMismatch, "permutation of length {} for {} channels", order.len(), self.channels);
        }
        let mut data = Vec::with_capacity(self.data.len());
        for &c in order {
            data.extend_from_slice(self.channel(c));
        }
        Self::new(self.dims, self.spacing, self.channels, data)
    }

    pub fn same_shape(&self, other: &FeatureVolume) -> bool {
        self.dims == other.dims && self.channels == other.channels
    }
}
