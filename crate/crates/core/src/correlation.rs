//! Dense SSD cost volume over a discrete displacement lattice.
//!
//! Nodes sit at voxel `g * s + s / 2`. The cost of displacement `d` at node
//! `g` is the mean, over channels and patch offsets `w` in `[-p, p]^3`, of
//! `(F_fix(clamp(x_g + w)) - F_mov(clamp(x_g + w + d)))^2`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Error, Result};
use crate::features::FeatureVolume;
use crate::math;
use crate::par;
use crate::volume::{Dims, DisplacementField, Spacing};

/// Default cap on the number of candidate displacements per node.
pub const DISPLACEMENT_BUDGET: usize = 5000;

/// Lattice of candidate displacements `q * (i - L)` for `i` in `0..=2L` per axis.
///
/// Displacements are enumerated with x fastest and z slowest, so index 0 is
/// `(-Lx q, -Ly q, -Lz q)` and the centre index is the zero displacement.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SearchSpace {
    pub extent: [usize; 3],
    pub quantisation: usize,
}

impl SearchSpace {
    pub fn new(extent: [usize; 3], quantisation: usize) -> Result<Self> {
        if quantisation == 0 {
            bail!(InvalidConfig, "quantisation step must be at least 1");
        }
        Ok(Self { extent, quantisation })
    }

    pub fn isotropic(extent: usize, quantisation: usize) -> Result<Self> {
        Self::new([extent; 3], quantisation)
    }

    /// Converts a capture range in mm to a lattice.
    ///
    /// Per axis `L = ceil(capture / (q * spacing))`, so `L * q` voxels cover
    /// at least the capture range. Without an explicit `quantisation` the
    /// smallest `q` whose lattice fits in `budget` displacements is used.
    pub fn plan(capture_mm: [f64; 3], spacing: Spacing, budget: usize, quantisation: Option<usize>) -> Result<Self> {
        if capture_mm.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            bail!(InvalidConfig, "capture range must be positive, got {capture_mm:?} mm");
        }
        let lattice = |q: usize| {
            let extent = [0, 1, 2].map(|a| math::ceil(capture_mm[a] / (q as f64 * spacing.0[a]) - 1e-9).max(0.0) as usize);
            Self { extent, quantisation: q }
        };
        if let Some(q) = quantisation {
            let s = Self::new(lattice(q.max(1)).extent, q)?;
            if s.count() > budget {
                bail!(
                    InvalidConfig,
                    "{} displacements at quantisation {q} exceed the budget of {budget}",
                    s.count()
                );
            }
            return Ok(s);
        }
        let largest = capture_mm
            .iter()
            .zip(spacing.0)
            .map(|(c, s)| math::ceil(c / s) as usize)
            .max()
            .unwrap_or(1)
            .max(1);
        (1..=largest)
            .map(lattice)
            .find(|s| s.count() <= budget)
            .ok_or_else(|| Error::InvalidConfig(alloc::format!("no lattice for {capture_mm:?} mm fits {budget} displacements")))
    }

    pub fn side(&self) -> [usize; 3] {
        self.extent.map(|l| 2 * l + 1)
    }

    /// Number of candidate displacements.
    pub fn count(&self) -> usize {
        self.side().iter().product()
    }

    pub fn centre_index(&self) -> usize {
        let [sx, sy, _] = self.side();
        let [lx, ly, lz] = self.extent;
        lx + sx * (ly + sy * lz)
    }

    /// Largest representable displacement per axis, in voxels.
    pub fn capture_voxels(&self) -> [usize; 3] {
        self.extent.map(|l| l * self.quantisation)
    }

    #[inline]
    pub fn displacement(&self, index: usize) -> [i32; 3] {
        let [sx, sy, _] = self.side();
        let q = self.quantisation as i32;
        let ix = index % sx;
        let iy = (index / sx) % sy;
        let iz = index / (sx * sy);
        [
            (ix as i32 - self.extent[0] as i32) * q,
            (iy as i32 - self.extent[1] as i32) * q,
            (iz as i32 - self.extent[2] as i32) * q,
        ]
    }

    pub fn displacements(&self) -> Vec<[i32; 3]> {
        (0..self.count()).map(|i| self.displacement(i)).collect()
    }

    /// Index of a lattice displacement, if it belongs to the lattice.
    pub fn index_of(&self, d: [i32; 3]) -> Option<usize> {
        let q = self.quantisation as i32;
        let side = self.side();
        let mut idx = [0usize; 3];
        for a in 0..3 {
            if d[a] % q != 0 {
                return None;
            }
            let i = d[a] / q + self.extent[a] as i32;
            if i < 0 || i as usize >= side[a] {
                return None;
            }
            idx[a] = i as usize;
        }
        Some(idx[0] + side[0] * (idx[1] + side[1] * idx[2]))
    }
}

/// Per-node costs over a [`SearchSpace`], stored node-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CostVolume {
    grid: Dims,
    stride: usize,
    search: SearchSpace,
    costs: Vec<f32>,
}

impl CostVolume {
    pub fn new(grid: Dims, stride: usize, search: SearchSpace, costs: Vec<f32>) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::EmptyGrid);
        }
        if costs.len() != grid.len() * search.count() {
            bail!(
                ShapeMismatch,
                "cost volume needs {} x {} entries, got {}",
                grid.len(),
                search.count(),
                costs.len()
            );
        }
        if let Some(i) = costs.iter().position(|c| !(c.is_finite() && *c >= 0.0)) {
            bail!(InvalidVolume, "cost {i} is negative or non-finite");
        }
        Ok(Self { grid, stride, search, costs })
    }

    pub fn grid(&self) -> Dims {
        self.grid
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn search(&self) -> &SearchSpace {
        &self.search
    }

    pub fn costs(&self) -> &[f32] {
        &self.costs
    }

    #[inline]
    pub fn node_costs(&self, node: usize) -> &[f32] {
        let d = self.search.count();
        &self.costs[node * d..(node + 1) * d]
    }

    #[inline]
    pub fn cost(&self, node: usize, displacement: usize) -> f32 {
        self.costs[node * self.search.count() + displacement]
    }

    /// Mean cost, summed per node in 64-bit and then across nodes in order.
    pub fn mean(&self) -> f64 {
        let d = self.search.count();
        let total: f64 = self
            .costs
            .chunks(d)
            .map(|row| row.iter().map(|&c| c as f64).sum::<f64>())
            .sum();
        total / self.costs.len() as f64
    }

    /// Divides all costs by their global mean; a zero mean leaves costs as is.
    pub fn normalised(mut self) -> Self {
        let m = self.mean();
        if m > 0.0 {
            self.costs.iter_mut().for_each(|c| *c = (*c as f64 / m) as f32);
        }
        self
    }

    /// Adds `weight * |d|^2` (voxels) to every cost, favouring small motion
    /// where costs tie, e.g. over uniform label regions.
    pub fn with_motion_penalty(mut self, weight: f32) -> Self {
        if weight > 0.0 {
            let pen: Vec<f32> = self
                .search
                .displacements()
                .iter()
                .map(|d| weight * d.iter().map(|&v| (v * v) as f32).sum::<f32>())
                .collect();
            for row in self.costs.chunks_mut(pen.len()) {
                row.iter_mut().zip(&pen).for_each(|(c, p)| *c += p);
            }
        }
        self
    }
}

/// Sorted unique voxel coordinates touched by node windows along one axis,
/// plus the position of each node's first window coordinate in that list.
fn window_coords(nodes: usize, stride: usize, p: usize) -> (Vec<isize>, Vec<usize>) {
    let mut coords: Vec<isize> = Vec::new();
    let mut starts = Vec::with_capacity(nodes);
    for g in 0..nodes {
        let c = (g * stride + stride / 2) as isize;
        let lo = c - p as isize;
        // Windows are increasing, so only the overlap with the tail needs skipping.
        let first_new = match coords.last() {
            Some(&last) if last >= lo => last + 1,
            _ => lo,
        };
        let start = coords.len() - (first_new - lo) as usize;
        starts.push(start);
        coords.extend(first_new..=c + p as isize);
    }
    (coords, starts)
}

#[inline]
fn clamp(v: isize, n: usize) -> usize {
    v.clamp(0, n as isize - 1) as usize
}

/// Builds the SSD cost volume between two feature volumes.
///
/// For each node layer and displacement, squared differences are
/// accumulated over the needed voxel rows only, then box-summed per node.
pub fn build_cost_volume(
    fixed: &FeatureVolume,
    moving: &FeatureVolume,
    stride: usize,
    search: &SearchSpace,
    patch_radius: usize,
) -> Result<CostVolume> {
    if !fixed.same_shape(moving) {
        bail!(
            ShapeMismatch,
            "feature volumes differ: {:?}x{} vs {:?}x{}",
            fixed.dims().to_array(),
            fixed.channels(),
            moving.dims().to_array(),
            moving.channels()
        );
    }
    let dims = fixed.dims();
    let grid = dims.node_grid(stride)?;
    let nd = search.count();
    let p = patch_radius;
    let win = 2 * p + 1;
    let channels = fixed.channels();
    let norm = (channels * win * win * win) as f64;

    let (xs, x_start) = window_coords(grid.nx, stride, p);
    let (ys, y_start) = window_coords(grid.ny, stride, p);
    let fx: Vec<usize> = xs.iter().map(|&u| clamp(u, dims.nx)).collect();
    let layer_len = grid.nx * grid.ny * nd;

    let mut costs = vec![0.0f32; grid.len() * nd];
    par::for_each_chunk(&mut costs, layer_len, |gz, layer| {
        let zc = (gz * stride + stride / 2) as isize;
        let mut plane = vec![0.0f32; ys.len() * xs.len()];
        let mut rowsum = vec![0.0f64; ys.len() * grid.nx];
        let mut mx = vec![0usize; xs.len()];
        for di in 0..nd {
            let d = search.displacement(di);
            plane.iter_mut().for_each(|v| *v = 0.0);
            for (m, &u) in mx.iter_mut().zip(&xs) {
                *m = clamp(u + d[0] as isize, dims.nx);
            }
            for wz in -(p as isize)..=p as isize {
                let uz = zc + wz;
                let fz = clamp(uz, dims.nz);
                let mz = clamp(uz + d[2] as isize, dims.nz);
                for (iy, &uy) in ys.iter().enumerate() {
                    let fy = clamp(uy, dims.ny);
                    let my = clamp(uy + d[1] as isize, dims.ny);
                    let frow = dims.index(0, fy, fz);
                    let mrow = dims.index(0, my, mz);
                    let acc = &mut plane[iy * xs.len()..(iy + 1) * xs.len()];
                    for c in 0..channels {
                        let f = &fixed.channel(c)[frow..frow + dims.nx];
                        let m = &moving.channel(c)[mrow..mrow + dims.nx];
                        for ((a, &i), &j) in acc.iter_mut().zip(&fx).zip(&mx) {
                            let diff = f[i] - m[j];
                            *a += diff * diff;
                        }
                    }
                }
            }
            for iy in 0..ys.len() {
                let row = &plane[iy * xs.len()..(iy + 1) * xs.len()];
                for gx in 0..grid.nx {
                    let s0 = x_start[gx];
                    rowsum[iy * grid.nx + gx] = row[s0..s0 + win].iter().map(|&v| v as f64).sum();
                }
            }
            for gy in 0..grid.ny {
                let s0 = y_start[gy];
                for gx in 0..grid.nx {
                    let mut acc = 0.0f64;
                    for wy in 0..win {
                        acc += rowsum[(s0 + wy) * grid.nx + gx];
                    }
                    layer[(gy * grid.nx + gx) * nd + di] = (acc / norm) as f32;
                }
            }
        }
    });
    CostVolume::new(grid, stride, *search, costs)
}

/// Index of the smallest entry, ties resolved to the lowest index.
#[inline]
pub(crate) fn argmin_index(row: &[f32]) -> usize {
    let mut best = 0;
    let mut best_cost = row[0];
    for (i, &c) in row.iter().enumerate().skip(1) {
        if c < best_cost {
            best = i;
            best_cost = c;
        }
    }
    best
}

/// Per-node displacement of minimal cost (coarse field at the cost stride).
pub fn argmin_field(cv: &CostVolume) -> DisplacementField {
    let grid = cv.grid();
    let best = par::map_range(grid.len(), |node| argmin_index(cv.node_costs(node)));
    let mut field = DisplacementField::zeros(grid, cv.stride());
    for (node, &b) in best.iter().enumerate() {
        field.set(node, cv.search().displacement(b).map(|v| v as f32));
    }
    field
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_picks_smallest_quantisation() {
        let sp = Spacing::new(1.75, 1.25, 1.75).unwrap();
        let s = SearchSpace::plan([42.0, 30.0, 42.0], sp, DISPLACEMENT_BUDGET, None).unwrap();
        assert_eq!((s.extent, s.quantisation), ([8, 8, 8], 3));
        let s = SearchSpace::plan([16.0; 3], Spacing::UNIT, DISPLACEMENT_BUDGET, None).unwrap();
        assert_eq!((s.extent, s.quantisation), ([8, 8, 8], 2));
        let s = SearchSpace::plan([8.0; 3], Spacing::UNIT, 27, Some(8)).unwrap();
        assert_eq!(s.extent, [1, 1, 1]);
        let e = SearchSpace::plan([16.0; 3], Spacing::UNIT, DISPLACEMENT_BUDGET, Some(1)).unwrap_err();
        assert!(alloc::format!("{e}").contains("35937"));
        assert!(SearchSpace::plan([0.0, 1.0, 1.0], Spacing::UNIT, 100, None).is_err());
    }

    #[test]
    fn lattice_enumeration_order() {
        let s = SearchSpace::new([1, 2, 1], 3).unwrap();
        assert_eq!(s.count(), 3 * 5 * 3);
        assert_eq!(s.displacement(0), [-3, -6, -3]);
        assert_eq!(s.displacement(1), [0, -6, -3]);
        assert_eq!(s.displacement(s.centre_index()), [0, 0, 0]);
        assert_eq!(s.displacement(s.count() - 1), [3, 6, 3]);
        for i in 0..s.count() {
            assert_eq!(s.index_of(s.displacement(i)), Some(i));
        }
        assert_eq!(s.index_of([1, 0, 0]), None);
        assert_eq!(s.index_of([6, 0, 0]), None);
        assert!(SearchSpace::new([1, 1, 1], 0).is_err());
    }

    #[test]
    fn window_coords_cover_each_node() {
        for (nodes, stride, p) in [(4, 2, 1), (3, 4, 1), (5, 1, 2), (2, 3, 0)] {
            let (xs, starts) = window_coords(nodes, stride, p);
            for g in 0..nodes {
                let c = (g * stride + stride / 2) as isize;
                for w in 0..=2 * p {
                    assert_eq!(xs[starts[g] + w], c - p as isize + w as isize);
                }
            }
            assert!(xs.windows(2).all(|w| w[1] == w[0] + 1 || w[1] > w[0]));
        }
    }

    #[test]
    fn self_match_has_zero_cost_at_centre() {
        let dims = Dims::cube(6);
        let data: Vec<f32> = (0..dims.len()).map(|i| ((i * 7919) % 97) as f32 / 97.0).collect();
        let f = FeatureVolume::new(dims, Spacing::UNIT, 1, data).unwrap();
        let s = SearchSpace::isotropic(1, 1).unwrap();
        let cv = build_cost_volume(&f, &f, 2, &s, 1).unwrap();
        for node in 0..cv.grid().len() {
            assert_eq!(cv.cost(node, s.centre_index()), 0.0);
        }
        let field = argmin_field(&cv);
        assert!(field.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let a = FeatureVolume::new(Dims::cube(4), Spacing::UNIT, 1, vec![0.0; 64]).unwrap();
        let b = FeatureVolume::new(Dims::cube(4), Spacing::UNIT, 2, vec![0.0; 128]).unwrap();
        let s = SearchSpace::isotropic(1, 1).unwrap();
        assert!(build_cost_volume(&a, &b, 2, &s, 1).is_err());
        assert!(matches!(build_cost_volume(&a, &a, 0, &s, 1), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn argmin_ties_pick_lowest_index() {
        let s = SearchSpace::isotropic(1, 1).unwrap();
        let mut costs = vec![1.0f32; 27];
        costs[5] = 0.5;
        costs[9] = 0.5;
        let cv = CostVolume::new(Dims::cube(1), 1, s, costs).unwrap();
        let f = argmin_field(&cv);
        let d = s.displacement(5).map(|v| v as f32);
        assert_eq!(f.get(0), d);
    }

    #[test]
    fn normalisation_gives_unit_mean() {
        let s = SearchSpace::isotropic(1, 1).unwrap();
        let costs: Vec<f32> = (0..54).map(|i| i as f32).collect();
        let cv = CostVolume::new(Dims::new(2, 1, 1), 1, s, costs).unwrap().normalised();
        assert!((cv.mean() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn motion_penalty_breaks_flat_ties_toward_zero() {
        let s = SearchSpace::isotropic(1, 2).unwrap();
        let cv = CostVolume::new(Dims::new(2, 1, 1), 1, s, vec![0.0; 54]).unwrap();
        assert_eq!(argmin_field(&cv).get(0), [-2.0; 3]);
        let cv = cv.with_motion_penalty(0.5);
        assert_eq!(cv.cost(1, 0), 6.0);
        assert_eq!(cv.cost(1, s.centre_index()), 0.0);
        assert_eq!(argmin_field(&cv).get(1), [0.0; 3]);
        let flat = CostVolume::new(Dims::cube(1), 1, s, vec![3.0; 27]).unwrap();
        assert_eq!(flat.clone().with_motion_penalty(0.0).costs(), flat.costs());
    }
}
