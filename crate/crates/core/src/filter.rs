//! Separable moving-average filtering with replicate padding.
//!
//! Each axis pass computes `out[i] = sum_{w=-r..=r} in[clamp(i + w)] / (2r + 1)`
//! in 64-bit arithmetic, summing the window in increasing `w`. Passes run
//! x, then y, then z. The f32 entry points round once after the last pass.

use alloc::vec;
use alloc::vec::Vec;

use crate::volume::{Dims, Volume3D};

fn axis_geometry(dims: Dims, axis: usize) -> (usize, usize) {
    // (length along axis, linear step between neighbours)
    match axis {
        0 => (dims.nx, 1),
        1 => (dims.ny, dims.nx),
        _ => (dims.nz, dims.nx * dims.ny),
    }
}

fn for_each_line(dims: Dims, axis: usize, mut f: impl FnMut(usize)) {
    // Calls `f` with the linear index of the first element of every line.
    match axis {
        0 => {
            for z in 0..dims.nz {
                for y in 0..dims.ny {
                    f(dims.index(0, y, z));
                }
            }
        }
        1 => {
            for z in 0..dims.nz {
                for x in 0..dims.nx {
                    f(dims.index(x, 0, z));
                }
            }
        }
        _ => {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    f(dims.index(x, y, 0));
                }
            }
        }
    }
}

fn mean_pass(src: &[f64], dst: &mut [f64], dims: Dims, axis: usize, r: usize) {
    let (n, step) = axis_geometry(dims, axis);
    let norm = (2 * r + 1) as f64;
    let r = r as isize;
    let hi = n as isize - 1;
    for_each_line(dims, axis, |start| {
        for i in 0..n as isize {
            let mut acc = 0.0;
            for w in -r..=r {
                let j = (i + w).clamp(0, hi) as usize;
                acc += src[start + j * step];
            }
            dst[start + i as usize * step] = acc / norm;
        }
    });
}

fn mean_pass_adjoint(src: &[f64], dst: &mut [f64], dims: Dims, axis: usize, r: usize) {
    let (n, step) = axis_geometry(dims, axis);
    let norm = (2 * r + 1) as f64;
    let r = r as isize;
    let hi = n as isize - 1;
    dst.iter_mut().for_each(|v| *v = 0.0);
    for_each_line(dims, axis, |start| {
        for i in 0..n as isize {
            let g = src[start + i as usize * step] / norm;
            for w in -r..=r {
                let j = (i + w).clamp(0, hi) as usize;
                dst[start + j * step] += g;
            }
        }
    });
}

/// Box filter in 64-bit; `radius` is per axis and 0 skips that axis.
pub fn box_filter_f64(data: &[f64], dims: Dims, radius: [usize; 3]) -> Vec<f64> {
    let mut cur = data.to_vec();
    let mut tmp = vec![0.0; data.len()];
    for axis in 0..3 {
        if radius[axis] > 0 {
            mean_pass(&cur, &mut tmp, dims, axis, radius[axis]);
            core::mem::swap(&mut cur, &mut tmp);
        }
    }
    cur
}

/// Adjoint of [`box_filter_f64`] (transpose of the linear operator).
pub fn box_filter_adjoint_f64(data: &[f64], dims: Dims, radius: [usize; 3]) -> Vec<f64> {
    let mut cur = data.to_vec();
    let mut tmp = vec![0.0; data.len()];
    for axis in (0..3).rev() {
        if radius[axis] > 0 {
            mean_pass_adjoint(&cur, &mut tmp, dims, axis, radius[axis]);
            core::mem::swap(&mut cur, &mut tmp);
        }
    }
    cur
}

/// Box filter of an f32 grid, accumulated in f64 and rounded once.
pub fn box_filter_f32(data: &[f32], dims: Dims, radius: [usize; 3]) -> Vec<f32> {
    if radius == [0, 0, 0] {
        return data.to_vec();
    }
    let wide: Vec<f64> = data.iter().map(|&v| v as f64).collect();
    box_filter_f64(&wide, dims, radius).into_iter().map(|v| v as f32).collect()
}

/// Moving average over a `(2r+1)` window per axis with replicate padding.
/// `r = [0, 0, 0]` returns the input unchanged.
pub fn box_filter(vol: &Volume3D, radius: [usize; 3]) -> Volume3D {
    let data = box_filter_f32(vol.data(), vol.dims(), radius);
    // Averages of finite values stay finite.
    Volume3D::new(vol.dims(), vol.spacing(), data).expect("filter preserves shape")
}
