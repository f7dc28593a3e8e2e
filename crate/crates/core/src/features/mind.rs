//! MIND-SSC: self-similarity context descriptor.
//!
//! For each of the 12 orthogonal pairs `{n_i, n_j}` drawn from the six-voxel
//! neighbourhood `{±d e_x, ±d e_y, ±d e_z}`, a patch distance
//! `dist_c = box((I(x + n_i) - I(x + n_j))^2, r)` is formed. Distances are
//! shifted by their per-voxel minimum, normalised by the per-voxel mean
//! (clamped to `[1e-3, 1e3]` times its volume average) and mapped through
//! `exp(-m / V)`. The result is invariant to `a * I + b` for `a > 0`.

use alloc::vec;
use alloc::vec::Vec;

use super::FeatureVolume;
use crate::error::{bail, Result};
use crate::filter::box_filter_f64;
use crate::math;
use crate::par;
use crate::volume::Volume3D;

pub const MIND_CHANNELS: usize = 12;

/// Neighbourhood directions in the order -x, +x, -y, +y, -z, +z.
pub const NEIGHBOURS: [[isize; 3]; 6] = [[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]];

/// Channel `c` compares neighbours `CHANNEL_PAIRS[c].0` and `.1` (indices into
/// [`NEIGHBOURS`]). Pairs are the orthogonal ones in lexicographic order.
pub const CHANNEL_PAIRS: [(usize, usize); MIND_CHANNELS] = [
    (0, 2),
    (0, 3),
    (0, 4),
    (0, 5),
    (1, 2),
    (1, 3),
    (1, 4),
    (1, 5),
    (2, 4),
    (2, 5),
    (3, 4),
    (3, 5),
];

/// Voxel offsets of both neighbours for every channel at dilation `d`.
pub fn channel_offsets(d: usize) -> [([isize; 3], [isize; 3]); MIND_CHANNELS] {
    let scale = |n: [isize; 3]| n.map(|v| v * d as isize);
    CHANNEL_PAIRS.map(|(i, j)| (scale(NEIGHBOURS[i]), scale(NEIGHBOURS[j])))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MindConfig {
    /// Neighbour offset in voxels.
    pub dilation: usize,
    /// Box-filter radius for patch distances.
    pub patch_radius: usize,
}

impl MindConfig {
    pub fn new(dilation: usize, patch_radius: usize) -> Result<Self> {
        let c = Self { dilation, patch_radius };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dilation == 0 {
            bail!(InvalidConfig, "MIND dilation must be at least 1");
        }
        Ok(())
    }
}

impl Default for MindConfig {
    fn default() -> Self {
        Self { dilation: 2, patch_radius: 2 }
    }
}

/// Computes the 12-channel MIND-SSC descriptor of `vol`.
pub fn mind_ssc(vol: &Volume3D, cfg: &MindConfig) -> Result<FeatureVolume> {
    cfg.validate()?;
    let dims = vol.dims();
    let d = cfg.dilation;
    let need = 2 * d + 1;
    if dims.nx < need || dims.ny < need || dims.nz < need {
        bail!(
            TooSmall,
            "MIND with dilation {d} needs at least {need} voxels per axis, got {:?}",
            dims.to_array()
        );
    }
    let n = dims.len();
    let src: Vec<f64> = vol.data().iter().map(|&v| v as f64).collect();

    let shifted: Vec<Vec<f64>> = par::map_range(NEIGHBOURS.len(), |k| {
        let off = NEIGHBOURS[k].map(|v| v * d as isize);
        let mut out = vec![0.0; n];
        let hi = [dims.nx as isize - 1, dims.ny as isize - 1, dims.nz as isize - 1];
        for (i, o) in out.iter_mut().enumerate() {
            let [x, y, z] = dims.coords(i);
            let sx = (x as isize + off[0]).clamp(0, hi[0]) as usize;
            let sy = (y as isize + off[1]).clamp(0, hi[1]) as usize;
            let sz = (z as isize + off[2]).clamp(0, hi[2]) as usize;
            *o = src[dims.index(sx, sy, sz)];
        }
        out
    });

    let r = cfg.patch_radius;
    let dist: Vec<Vec<f64>> = par::map_range(MIND_CHANNELS, |c| {
        let (i, j) = CHANNEL_PAIRS[c];
        let sq: Vec<f64> = shifted[i]
            .iter()
            .zip(&shifted[j])
            .map(|(a, b)| (a - b) * (a - b))
            .collect();
        box_filter_f64(&sq, dims, [r, r, r])
    });
    drop(shifted);

    // m_c = dist_c - min_c dist, V = mean_c m_c, stored back into `dist`.
    let mut dist = dist;
    let mut variance = vec![0.0; n];
    for (i, v) in variance.iter_mut().enumerate() {
        let mut lo = f64::INFINITY;
        for ch in &dist {
            lo = lo.min(ch[i]);
        }
        let mut acc = 0.0;
        for ch in dist.iter_mut() {
            ch[i] -= lo;
            acc += ch[i];
        }
        *v = acc / MIND_CHANNELS as f64;
    }
    let mean_var = variance.iter().sum::<f64>() / n as f64;
    if mean_var > 0.0 {
        let (lo, hi) = (1e-3 * mean_var, 1e3 * mean_var);
        variance.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
    } else {
        variance.iter_mut().for_each(|v| *v = 1.0);
    }

    let mut data = Vec::with_capacity(MIND_CHANNELS * n);
    for ch in &dist {
        data.extend(
            ch.iter()
                .zip(&variance)
                .map(|(m, v)| (math::exp(-m / v) as f32).max(f32::MIN_POSITIVE)),
        );
    }
    FeatureVolume::new(dims, vol.spacing(), MIND_CHANNELS, data)
}
