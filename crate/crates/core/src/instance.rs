//! Adam-based instance optimisation of a coarse displacement grid.
//!
//! Grid parameters are smoothed by repeated 3x3x3 mean filtering (a cheap
//! B-spline-like kernel) and trilinearly upsampled to full resolution. The
//! loss is the mean squared feature difference after warping plus a
//! diffusion penalty on neighbouring raw parameters:
//!
//! ```text
//! L = mean_{x,c} (F_fix,c(x) - F_mov,c(x + u(x)))^2
//!   + lambda * mean_{edges (g,g')} |p(g) - p(g')|^2 / s^2
//! ```
//!
//! Gradients are exact: the similarity term differentiates through trilinear
//! sampling and through the adjoint of the (linear) smooth/upsample operator.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Error, Result};
use crate::features::FeatureVolume;
use crate::filter::{box_filter_adjoint_f64, box_filter_f64};
use crate::math;
use crate::par;
use crate::sample::Stencil;
use crate::volume::{Dims, DisplacementField};

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct InstanceOptConfig {
    /// Adam step size, in voxels.
    pub learning_rate: f64,
    pub iterations: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Weight of the diffusion term.
    pub diffusion_weight: f64,
    /// Mean-filter passes applied to the grid before upsampling.
    pub smoothing_passes: usize,
    /// Evaluate the similarity on every n-th voxel per axis (1 = all voxels).
    pub sample_stride: usize,
}

impl Default for InstanceOptConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            iterations: 50,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            diffusion_weight: 1.0,
            smoothing_passes: 3,
            sample_stride: 1,
        }
    }
}

impl InstanceOptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            bail!(InvalidConfig, "learning rate must be positive, got {}", self.learning_rate);
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                bail!(InvalidConfig, "{name} must lie in [0, 1), got {b}");
            }
        }
        if !(self.epsilon > 0.0) {
            bail!(InvalidConfig, "epsilon must be positive, got {}", self.epsilon);
        }
        if !(self.diffusion_weight >= 0.0 && self.diffusion_weight.is_finite()) {
            bail!(InvalidConfig, "diffusion weight must be non-negative, got {}", self.diffusion_weight);
        }
        if self.sample_stride == 0 {
            bail!(InvalidConfig, "sample stride must be at least 1");
        }
        Ok(())
    }
}

/// First and second moment estimates of Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    pub fn steps(&self) -> u32 {
        self.t
    }

    /// One bias-corrected Adam update of `params` along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &InstanceOptConfig) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(cfg.beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(cfg.beta2, self.t as f64);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= cfg.learning_rate * m_hat / (math::sqrt(v_hat) + cfg.epsilon);
        }
    }
}

/// Linear interpolation table for one axis: fine index -> (i0, i1, frac).
fn upsample_table(fine: usize, coarse: usize, stride: usize) -> Vec<(usize, usize, f64)> {
    let off = (stride / 2) as f64;
    let hi = (coarse - 1) as f64;
    (0..fine)
        .map(|x| {
            let g = ((x as f64 - off) / stride as f64).clamp(0.0, hi);
            let i0 = g as usize;
            let i1 = (i0 + 1).min(coarse - 1);
            (i0, i1, g - i0 as f64)
        })
        .collect()
}

fn axis_step(d: Dims, axis: usize) -> usize {
    match axis {
        0 => 1,
        1 => d.nx,
        _ => d.nx * d.ny,
    }
}

fn with_axis(d: Dims, axis: usize, n: usize) -> Dims {
    let mut a = d.to_array();
    a[axis] = n;
    Dims::from_array(a)
}

/// Interpolates `src` (dims `sd`) along `axis` using `table`.
fn resample_axis(src: &[f64], sd: Dims, axis: usize, table: &[(usize, usize, f64)]) -> (Vec<f64>, Dims) {
    let dd = with_axis(sd, axis, table.len());
    let mut dst = vec![0.0; dd.len()];
    let ss = axis_step(sd, axis);
    for (j, o) in dst.iter_mut().enumerate() {
        let c = dd.coords(j);
        let (i0, i1, f) = table[c[axis]];
        let mut b = c;
        b[axis] = 0;
        let base = sd.index(b[0], b[1], b[2]);
        let a0 = src[base + i0 * ss];
        let a1 = src[base + i1 * ss];
        *o = a0 + f * (a1 - a0);
    }
    (dst, dd)
}

/// Transpose of [`resample_axis`]: scatters `src` (fine along `axis`) back
/// onto a grid of length `coarse` along that axis.
fn resample_axis_adjoint(src: &[f64], sd: Dims, axis: usize, table: &[(usize, usize, f64)], coarse: usize) -> (Vec<f64>, Dims) {
    let dd = with_axis(sd, axis, coarse);
    let mut dst = vec![0.0; dd.len()];
    let ds = axis_step(dd, axis);
    for (j, &g) in src.iter().enumerate() {
        let c = sd.coords(j);
        let (i0, i1, f) = table[c[axis]];
        let mut b = c;
        b[axis] = 0;
        let base = dd.index(b[0], b[1], b[2]);
        dst[base + i0 * ds] += (1.0 - f) * g;
        dst[base + i1 * ds] += f * g;
    }
    (dst, dd)
}

/// The linear map from raw grid parameters to a full-resolution field.
#[derive(Clone, Debug)]
struct SmoothUpsample {
    grid: Dims,
    target: Dims,
    passes: usize,
    tables: [Vec<(usize, usize, f64)>; 3],
}

impl SmoothUpsample {
    fn new(grid: Dims, stride: usize, passes: usize, target: Dims) -> Result<Self> {
        let expect = target.node_grid(stride)?;
        if expect != grid {
            bail!(
                ShapeMismatch,
                "grid {:?} at stride {stride} does not cover volume {:?} (expected grid {:?})",
                grid.to_array(),
                target.to_array(),
                expect.to_array()
            );
        }
        let tables = [
            upsample_table(target.nx, grid.nx, stride),
            upsample_table(target.ny, grid.ny, stride),
            upsample_table(target.nz, grid.nz, stride),
        ];
        Ok(Self { grid, target, passes, tables })
    }

    fn apply(&self, comp: &[f64]) -> Vec<f64> {
        let mut cur = comp.to_vec();
        for _ in 0..self.passes {
            cur = box_filter_f64(&cur, self.grid, [1, 1, 1]);
        }
        let mut d = self.grid;
        for axis in 0..3 {
            let (next, nd) = resample_axis(&cur, d, axis, &self.tables[axis]);
            cur = next;
            d = nd;
        }
        cur
    }

    fn adjoint(&self, fine: &[f64]) -> Vec<f64> {
        let mut cur = fine.to_vec();
        let mut d = self.target;
        let coarse = self.grid.to_array();
        for axis in (0..3).rev() {
            let (next, nd) = resample_axis_adjoint(&cur, d, axis, &self.tables[axis], coarse[axis]);
            cur = next;
            d = nd;
        }
        for _ in 0..self.passes {
            cur = box_filter_adjoint_f64(&cur, self.grid, [1, 1, 1]);
        }
        cur
    }
}

/// Smooths a coarse parameter grid with `passes` 3x3x3 mean filters and
/// upsamples it trilinearly to a full-resolution field of size `target`.
pub fn smooth_and_upsample(params: &DisplacementField, passes: usize, target: Dims) -> Result<DisplacementField> {
    let op = SmoothUpsample::new(params.dims(), params.stride(), passes, target)?;
    let mut data = Vec::with_capacity(3 * target.len());
    for c in 0..3 {
        let comp: Vec<f64> = params.component(c).iter().map(|&v| v as f64).collect();
        data.extend(op.apply(&comp).into_iter().map(|v| v as f32));
    }
    DisplacementField::new(target, 1, data)
}

/// Loss value, its two terms and the gradient with respect to the grid
/// parameters (planar layout, same as [`DisplacementField`]).
#[derive(Clone, Debug, PartialEq)]
pub struct LossGradient {
    pub loss: f64,
    pub similarity: f64,
    pub diffusion: f64,
    pub gradient: Vec<f64>,
}

/// Reusable evaluator of the instance-optimisation objective.
#[derive(Debug)]
pub struct Objective<'a> {
    fixed: &'a FeatureVolume,
    moving: &'a FeatureVolume,
    op: SmoothUpsample,
    stride: usize,
    lambda: f64,
    sample_stride: usize,
}

impl<'a> Objective<'a> {
    pub fn new(
        fixed: &'a FeatureVolume,
        moving: &'a FeatureVolume,
        grid: Dims,
        stride: usize,
        cfg: &InstanceOptConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if !fixed.same_shape(moving) {
            bail!(ShapeMismatch, "fixed and moving features differ in shape");
        }
        let op = SmoothUpsample::new(grid, stride, cfg.smoothing_passes, fixed.dims())?;
        Ok(Self { fixed, moving, op, stride, lambda: cfg.diffusion_weight, sample_stride: cfg.sample_stride })
    }

    pub fn grid(&self) -> Dims {
        self.op.grid
    }

    /// Full-resolution displacement components (f64) for planar `params`.
    pub fn displacement(&self, params: &[f64]) -> [Vec<f64>; 3] {
        let g = self.op.grid.len();
        [0, 1, 2].map(|c| self.op.apply(&params[c * g..(c + 1) * g]))
    }

    pub fn evaluate(&self, params: &[f64]) -> LossGradient {
        let dims = self.fixed.dims();
        let u = self.displacement(params);
        let channels = self.fixed.channels();
        let ss = self.sample_stride;
        let sampled = |n: usize| n.div_ceil(ss);
        let count = sampled(dims.nx) * sampled(dims.ny) * sampled(dims.nz);
        let scale = 1.0 / (count * channels) as f64;

        // Per z-slice partial sums, combined below in slice order.
        let slices = par::map_range(sampled(dims.nz), |iz| {
            let z = iz * ss;
            let mut loss = 0.0;
            let mut grad = Vec::with_capacity(sampled(dims.nx) * sampled(dims.ny));
            for y in (0..dims.ny).step_by(ss) {
                for x in (0..dims.nx).step_by(ss) {
                    let i = dims.index(x, y, z);
                    let p = [x as f64 + u[0][i], y as f64 + u[1][i], z as f64 + u[2][i]];
                    let st = Stencil::new(dims, p);
                    let mut g = [0.0; 3];
                    for c in 0..channels {
                        let (val, dv) = st.value_grad(self.moving.channel(c));
                        let r = val - self.fixed.channel(c)[i] as f64;
                        loss += r * r;
                        for a in 0..3 {
                            g[a] += 2.0 * r * dv[a];
                        }
                    }
                    grad.push((i, g));
                }
            }
            (loss, grad)
        });

        let n = dims.len();
        let mut sim = 0.0;
        let mut du = vec![0.0; 3 * n];
        for (loss, grad) in slices {
            sim += loss;
            for (i, g) in grad {
                for a in 0..3 {
                    du[a * n + i] = g[a] * scale;
                }
            }
        }
        sim *= scale;

        let grid = self.op.grid;
        let gn = grid.len();
        let mut gradient = Vec::with_capacity(3 * gn);
        for a in 0..3 {
            gradient.extend(self.op.adjoint(&du[a * n..(a + 1) * n]));
        }

        let diffusion = self.add_diffusion(params, &mut gradient);
        LossGradient { loss: sim + self.lambda * diffusion, similarity: sim, diffusion, gradient }
    }

    /// Adds `lambda * dL_diff/dp` to `gradient` and returns `L_diff`.
    fn add_diffusion(&self, params: &[f64], gradient: &mut [f64]) -> f64 {
        let grid = self.op.grid;
        let gn = grid.len();
        let edges = (grid.nx - 1) * grid.ny * grid.nz + grid.nx * (grid.ny - 1) * grid.nz + grid.nx * grid.ny * (grid.nz - 1);
        if edges == 0 {
            return 0.0;
        }
        let norm = 1.0 / ((self.stride * self.stride) as f64 * edges as f64);
        let mut total = 0.0;
        for a in 0..3 {
            let step = axis_step(grid, a);
            for i in 0..gn {
                let c = grid.coords(i);
                if c[a] + 1 >= grid.to_array()[a] {
                    continue;
                }
                let j = i + step;
                for k in 0..3 {
                    let diff = params[k * gn + j] - params[k * gn + i];
                    total += diff * diff;
                    let g = 2.0 * diff * norm * self.lambda;
                    gradient[k * gn + j] += g;
                    gradient[k * gn + i] -= g;
                }
            }
        }
        total * norm
    }
}

fn to_f64(field: &DisplacementField) -> Vec<f64> {
    field.data().iter().map(|&v| v as f64).collect()
}

/// Loss and exact gradient of the objective at `params`.
pub fn loss_and_gradient(
    params: &DisplacementField,
    fixed: &FeatureVolume,
    moving: &FeatureVolume,
    cfg: &InstanceOptConfig,
) -> Result<LossGradient> {
    let obj = Objective::new(fixed, moving, params.dims(), params.stride(), cfg)?;
    Ok(obj.evaluate(&to_f64(params)))
}

/// Result of an Adam run: final parameters and the loss before every step.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamOutcome {
    pub params: DisplacementField,
    pub losses: Vec<f64>,
}

/// Runs Adam on an arbitrary differentiable objective.
///
/// `objective` returns the loss and gradient at the given parameters. The
/// returned loss trace has one entry per iteration, evaluated before the
/// update of that iteration.
pub fn adam_minimise<F>(init: &[f64], cfg: &InstanceOptConfig, mut objective: F) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    cfg.validate()?;
    let mut params = init.to_vec();
    let mut state = AdamState::new(params.len());
    let mut losses = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let (loss, grad) = objective(&params);
        if !loss.is_finite() {
            return Err(Error::NonFinite { what: "loss", iteration: it });
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { what: "gradient", iteration: it });
        }
        losses.push(loss);
        state.step(&mut params, &grad, cfg);
    }
    Ok((params, losses))
}

/// Refines a coarse displacement grid by Adam on the warped-feature loss.
pub fn adam_optimise(
    init: &DisplacementField,
    fixed: &FeatureVolume,
    moving: &FeatureVolume,
    cfg: &InstanceOptConfig,
) -> Result<AdamOutcome> {
    let obj = Objective::new(fixed, moving, init.dims(), init.stride(), cfg)?;
    let (params, losses) = adam_minimise(&to_f64(init), cfg, |p| {
        let lg = obj.evaluate(p);
        (lg.loss, lg.gradient)
    })?;
    let params = DisplacementField::new(init.dims(), init.stride(), params.into_iter().map(|v| v as f32).collect())?;
    Ok(AdamOutcome { params, losses })
}
