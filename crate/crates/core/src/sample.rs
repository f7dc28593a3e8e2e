//! Trilinear and nearest-neighbour sampling with border clamping.
//!
//! Coordinates are continuous voxel positions. Each axis is clamped to
//! `[0, n - 1]` before interpolation, which replicates border values. The
//! interpolant is piecewise linear; derivatives use the cell to the left of
//! the sample point whenever the point lies exactly on a lattice plane, and
//! are zero wherever the clamp is active.

use crate::volume::{Dims, Volume3D};

#[derive(Clone, Copy, Debug)]
struct Axis {
    i0: usize,
    i1: usize,
    f: f64,
    d0: usize,
    d1: usize,
    active: bool,
}

impl Axis {
    #[inline]
    fn new(c: f64, n: usize) -> Self {
        let hi = (n - 1) as f64;
        // NaN falls into the first branch.
        let cc = if !(c > 0.0) {
            0.0
        } else if c > hi {
            hi
        } else {
            c
        };
        let i0 = cc as usize;
        let i1 = if i0 + 1 < n { i0 + 1 } else { i0 };
        let f = cc - i0 as f64;
        let active = n > 1 && c > 0.0 && c <= hi;
        let (d0, d1) = if f > 0.0 {
            (i0, i1)
        } else if i0 > 0 {
            (i0 - 1, i0)
        } else {
            (0, 0)
        };
        Self { i0, i1, f, d0, d1, active }
    }

    /// True when the derivative cell differs from the interpolation cell.
    #[inline]
    fn on_lattice(&self) -> bool {
        self.active && self.f == 0.0
    }
}

#[derive(Clone, Copy)]
enum Op {
    Lerp(usize, usize, f64),
    Diff(usize, usize),
    Zero,
}

impl Op {
    #[inline]
    fn indices(self) -> (usize, usize) {
        match self {
            Op::Lerp(a, b, _) | Op::Diff(a, b) => (a, b),
            Op::Zero => (0, 0),
        }
    }

    #[inline]
    fn combine(self, a: f64, b: f64) -> f64 {
        match self {
            Op::Lerp(_, _, f) => a + f * (b - a),
            Op::Diff(_, _) => b - a,
            Op::Zero => 0.0,
        }
    }
}

#[inline]
fn lerp(a: f64, b: f64, f: f64) -> f64 {
    a + f * (b - a)
}

/// Precomputed interpolation stencil for one sample position, reusable
/// across channels that share the same grid.
#[derive(Clone, Copy, Debug)]
pub struct Stencil {
    ax: [Axis; 3],
    nx: usize,
    nxy: usize,
}

impl Stencil {
    #[inline]
    pub fn new(dims: Dims, p: [f64; 3]) -> Self {
        Self {
            ax: [Axis::new(p[0], dims.nx), Axis::new(p[1], dims.ny), Axis::new(p[2], dims.nz)],
            nx: dims.nx,
            nxy: dims.nx * dims.ny,
        }
    }

    #[inline]
    fn corners(&self, data: &[f32]) -> [f64; 8] {
        let [x, y, z] = self.ax;
        let r00 = y.i0 * self.nx + z.i0 * self.nxy;
        let r10 = y.i1 * self.nx + z.i0 * self.nxy;
        let r01 = y.i0 * self.nx + z.i1 * self.nxy;
        let r11 = y.i1 * self.nx + z.i1 * self.nxy;
        [
            data[r00 + x.i0] as f64,
            data[r00 + x.i1] as f64,
            data[r10 + x.i0] as f64,
            data[r10 + x.i1] as f64,
            data[r01 + x.i0] as f64,
            data[r01 + x.i1] as f64,
            data[r11 + x.i0] as f64,
            data[r11 + x.i1] as f64,
        ]
    }

    #[inline]
    pub fn value(&self, data: &[f32]) -> f64 {
        let v = self.corners(data);
        let [x, y, z] = self.ax;
        let a = lerp(lerp(v[0], v[1], x.f), lerp(v[2], v[3], x.f), y.f);
        let b = lerp(lerp(v[4], v[5], x.f), lerp(v[6], v[7], x.f), y.f);
        lerp(a, b, z.f)
    }

    /// Value and partial derivatives with respect to the sample position.
    #[inline]
    pub fn value_grad(&self, data: &[f32]) -> (f64, [f64; 3]) {
        let [x, y, z] = self.ax;
        if x.on_lattice() || y.on_lattice() || z.on_lattice() {
            return self.value_grad_general(data);
        }
        let v = self.corners(data);
        let (fx, fy, fz) = (x.f, y.f, z.f);
        let a = lerp(lerp(v[0], v[1], fx), lerp(v[2], v[3], fx), fy);
        let b = lerp(lerp(v[4], v[5], fx), lerp(v[6], v[7], fx), fy);
        let value = lerp(a, b, fz);
        let gx = if x.active {
            lerp(lerp(v[1] - v[0], v[3] - v[2], fy), lerp(v[5] - v[4], v[7] - v[6], fy), fz)
        } else {
            0.0
        };
        let gy = if y.active {
            lerp(lerp(v[2] - v[0], v[3] - v[1], fx), lerp(v[6] - v[4], v[7] - v[5], fx), fz)
        } else {
            0.0
        };
        let gz = if z.active {
            lerp(lerp(v[4] - v[0], v[5] - v[1], fx), lerp(v[6] - v[2], v[7] - v[3], fx), fy)
        } else {
            0.0
        };
        (value, [gx, gy, gz])
    }

    fn value_grad_general(&self, data: &[f32]) -> (f64, [f64; 3]) {
        let lerp_op = |a: &Axis| Op::Lerp(a.i0, a.i1, a.f);
        let diff_op = |a: &Axis| if a.active { Op::Diff(a.d0, a.d1) } else { Op::Zero };
        let l = [lerp_op(&self.ax[0]), lerp_op(&self.ax[1]), lerp_op(&self.ax[2])];
        let value = self.eval(data, l);
        let mut grad = [0.0; 3];
        for (a, g) in grad.iter_mut().enumerate() {
            let mut ops = l;
            ops[a] = diff_op(&self.ax[a]);
            *g = self.eval(data, ops);
        }
        (value, grad)
    }

    fn eval(&self, data: &[f32], ops: [Op; 3]) -> f64 {
        if ops.iter().any(|o| matches!(o, Op::Zero)) {
            return 0.0;
        }
        let (x0, x1) = ops[0].indices();
        let (y0, y1) = ops[1].indices();
        let (z0, z1) = ops[2].indices();
        let row = |y: usize, z: usize| {
            let base = y * self.nx + z * self.nxy;
            ops[0].combine(data[base + x0] as f64, data[base + x1] as f64)
        };
        let plane = |z: usize| ops[1].combine(row(y0, z), row(y1, z));
        ops[2].combine(plane(z0), plane(z1))
    }
}

/// Trilinear sample of a single-channel grid at a continuous voxel position.
#[inline]
pub fn sample(data: &[f32], dims: Dims, p: [f64; 3]) -> f64 {
    Stencil::new(dims, p).value(data)
}

/// Trilinear sample and its spatial gradient.
#[inline]
pub fn sample_with_gradient(data: &[f32], dims: Dims, p: [f64; 3]) -> (f64, [f64; 3]) {
    Stencil::new(dims, p).value_grad(data)
}

/// Trilinear sample of a volume, clamped at the borders.
pub fn trilinear_sample(vol: &Volume3D, p: [f64; 3]) -> f32 {
    sample(vol.data(), vol.dims(), p) as f32
}

/// Linear index of the voxel nearest to `p` after clamping; ties round up.
#[inline]
pub fn nearest_index(dims: Dims, p: [f64; 3]) -> usize {
    let round = |c: f64, n: usize| {
        let hi = (n - 1) as f64;
        let cc = if !(c > 0.0) {
            0.0
        } else if c > hi {
            hi
        } else {
            c
        };
        ((cc + 0.5) as usize).min(n - 1)
    };
    dims.index(round(p[0], dims.nx), round(p[1], dims.ny), round(p[2], dims.nz))
}
