//! Volume, label, landmark and displacement data model.
//!
//! All grids are stored in x-fastest linear order: `i = x + nx * (y + ny * z)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Error, Result};

/// Grid extent along x, y and z.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub const fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Self { nx, ny, nz }
    }

    pub const fn cube(n: usize) -> Self {
        Self::new(n, n, n)
    }

    #[inline]
    pub const fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    #[inline]
    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub const fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }

    #[inline]
    pub const fn coords(&self, i: usize) -> [usize; 3] {
        let x = i % self.nx;
        let yz = i / self.nx;
        [x, yz % self.ny, yz / self.ny]
    }

    pub const fn to_array(self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    pub const fn from_array(a: [usize; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    /// Node grid obtained by placing nodes at `g * stride + stride / 2`.
    pub fn node_grid(&self, stride: usize) -> Result<Dims> {
        if stride == 0 {
            bail!(InvalidConfig, "grid stride must be at least 1");
        }
        let count = |n: usize| {
            let off = stride / 2;
            if n == 0 || n - 1 < off {
                0
            } else {
                (n - 1 - off) / stride + 1
            }
        };
        let g = Dims::new(count(self.nx), count(self.ny), count(self.nz));
        if g.is_empty() {
            return Err(Error::EmptyGrid);
        }
        Ok(g)
    }
}

/// Physical voxel size in millimetres along x, y and z.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Spacing(pub [f64; 3]);

impl Spacing {
    pub const UNIT: Spacing = Spacing([1.0, 1.0, 1.0]);

    pub fn new(sx: f64, sy: f64, sz: f64) -> Result<Self> {
        let s = Spacing([sx, sy, sz]);
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        if self.0.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            bail!(InvalidVolume, "spacing must be positive and finite, got {:?}", self.0);
        }
        Ok(())
    }
}

impl Default for Spacing {
    fn default() -> Self {
        Self::UNIT
    }
}

fn check_len(dims: Dims, channels: usize, len: usize) -> Result<()> {
    if dims.is_empty() {
        bail!(InvalidVolume, "dimensions must be positive, got {:?}", dims.to_array());
    }
    if dims.len() * channels != len {
        bail!(
            ShapeMismatch,
            "expected {} values for dims {:?} x {} channel(s), got {}",
            dims.len() * channels,
            dims.to_array(),
            channels,
            len
        );
    }
    Ok(())
}

/// Dense scalar volume.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume3D {
    dims: Dims,
    spacing: Spacing,
    data: Vec<f32>,
}

impl Volume3D {
    pub fn new(dims: Dims, spacing: Spacing, data: Vec<f32>) -> Result<Self> {
        check_len(dims, 1, data.len())?;
        spacing.validate()?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            bail!(InvalidVolume, "non-finite value at linear index {i}");
        }
        Ok(Self { dims, spacing, data })
    }

    pub fn zeros(dims: Dims, spacing: Spacing) -> Self {
        Self { dims, spacing, data: vec![0.0; dims.len()] }
    }

    pub fn from_fn(dims: Dims, spacing: Spacing, mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.len());
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(dims, spacing, data)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.dims.index(x, y, z)]
    }

    /// Applies `f` to every value, keeping the geometry.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Self> {
        Self::new(self.dims, self.spacing, self.data.iter().map(|&v| f(v)).collect())
    }
}

/// Integer label map. Label 0 is background.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelVolume {
    dims: Dims,
    spacing: Spacing,
    data: Vec<u32>,
    num_classes: u32,
}

impl LabelVolume {
    pub fn new(dims: Dims, spacing: Spacing, data: Vec<u32>, num_classes: u32) -> Result<Self> {
        check_len(dims, 1, data.len())?;
        spacing.validate()?;
        if let Some(&bad) = data.iter().find(|&&l| l >= num_classes) {
            bail!(InvalidVolume, "label {bad} outside [0, {num_classes})");
        }
        Ok(Self { dims, spacing, data, num_classes })
    }

    /// Builds a label volume whose class count is one past the largest label.
    pub fn from_labels(dims: Dims, spacing: Spacing, data: Vec<u32>) -> Result<Self> {
        let k = data.iter().copied().max().unwrap_or(0) + 1;
        Self::new(dims, spacing, data, k)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn num_classes(&self) -> u32 {
        self.num_classes
    }

    /// Widens the declared class count, e.g. to match a paired volume.
    pub fn with_num_classes(mut self, k: u32) -> Result<Self> {
        if k < self.num_classes && self.data.iter().any(|&l| l >= k) {
            bail!(InvalidVolume, "cannot shrink class count to {k}");
        }
        self.num_classes = k;
        Ok(self)
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> u32 {
        self.data[self.dims.index(x, y, z)]
    }

    /// Sorted list of labels that occur at least once, background included.
    pub fn present_classes(&self) -> Vec<u32> {
        let mut seen = vec![false; self.num_classes as usize];
        for &l in &self.data {
            seen[l as usize] = true;
        }
        (0..self.num_classes).filter(|&k| seen[k as usize]).collect()
    }
}

/// Ordered landmarks in continuous voxel coordinates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LandmarkSet {
    points: Vec<[f64; 3]>,
}

impl LandmarkSet {
    pub fn new(points: Vec<[f64; 3]>) -> Self {
        Self { points }
    }

    /// Rejects points outside `[0, n - 1]` on any axis.
    pub fn checked(points: Vec<[f64; 3]>, dims: Dims) -> Result<Self> {
        let n = dims.to_array();
        for (i, p) in points.iter().enumerate() {
            for a in 0..3 {
                if !(p[a].is_finite() && p[a] >= 0.0 && p[a] <= (n[a] - 1) as f64) {
                    bail!(InvalidVolume, "landmark {i} at {:?} lies outside the volume {:?}", p, n);
                }
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Displacement vectors in voxel units of the fixed image.
///
/// Nodes sit at voxel `g * stride + stride / 2`; a stride of 1 is a
/// full-resolution field. Components are stored planar (all x, then all y,
/// then all z), each plane in x-fastest order.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementField {
    dims: Dims,
    stride: usize,
    data: Vec<f32>,
}

impl DisplacementField {
    pub fn new(dims: Dims, stride: usize, data: Vec<f32>) -> Result<Self> {
        check_len(dims, 3, data.len())?;
        if stride == 0 {
            bail!(InvalidConfig, "stride must be at least 1");
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            bail!(InvalidVolume, "non-finite displacement at index {i}");
        }
        Ok(Self { dims, stride, data })
    }

    pub fn zeros(dims: Dims, stride: usize) -> Self {
        Self { dims, stride: stride.max(1), data: vec![0.0; 3 * dims.len()] }
    }

    pub fn constant(dims: Dims, stride: usize, v: [f32; 3]) -> Self {
        let n = dims.len();
        let mut data = Vec::with_capacity(3 * n);
        for c in v {
            data.extend(core::iter::repeat_n(c, n));
        }
        Self { dims, stride: stride.max(1), data }
    }

    pub fn from_fn(dims: Dims, stride: usize, mut f: impl FnMut(usize, usize, usize) -> [f32; 3]) -> Result<Self> {
        let n = dims.len();
        let mut data = vec![0.0; 3 * n];
        for i in 0..n {
            let [x, y, z] = dims.coords(i);
            let v = f(x, y, z);
            for c in 0..3 {
                data[c * n + i] = v[c];
            }
        }
        Self::new(dims, stride, data)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn component(&self, c: usize) -> &[f32] {
        let n = self.dims.len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.dims.len();
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, i: usize) -> [f32; 3] {
        let n = self.dims.len();
        [self.data[i], self.data[n + i], self.data[2 * n + i]]
    }

    #[inline]
    pub fn set(&mut self, i: usize, v: [f32; 3]) {
        let n = self.dims.len();
        self.data[i] = v[0];
        self.data[n + i] = v[1];
        self.data[2 * n + i] = v[2];
    }

    /// Voxel position of node index `g` along one axis.
    #[inline]
    pub fn node_voxel(&self, g: usize) -> usize {
        g * self.stride + self.stride / 2
    }

    pub fn same_grid(&self, other: &DisplacementField) -> bool {
        self.dims == other.dims && self.stride == other.stride
    }
}
