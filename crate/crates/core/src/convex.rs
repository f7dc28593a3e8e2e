//! Coupled convex optimisation over a cost volume, and forward/backward
//! symmetrisation of displacement fields.

use alloc::vec;
use alloc::vec::Vec;

use crate::correlation::{argmin_field, CostVolume};
use crate::error::{bail, Result};
use crate::filter::box_filter_f32;
use crate::math;
use crate::par;
use crate::sample::Stencil;
use crate::volume::DisplacementField;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConvexConfig {
    /// Coupling weights, one per iteration, on mean-normalised costs.
    pub schedule: Vec<f32>,
    /// 3x3x3 mean-filter passes applied after every argmin.
    pub smoothing_passes: usize,
}

impl ConvexConfig {
    pub fn new(schedule: Vec<f32>, smoothing_passes: usize) -> Result<Self> {
        let c = Self { schedule, smoothing_passes };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schedule.is_empty() {
            bail!(InvalidConfig, "coupling schedule needs at least one iteration");
        }
        if self.schedule.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            bail!(InvalidConfig, "coupling weights must be positive, got {:?}", self.schedule);
        }
        if self.schedule.windows(2).any(|w| w[1] <= w[0]) {
            bail!(InvalidConfig, "coupling schedule must increase strictly, got {:?}", self.schedule);
        }
        Ok(())
    }

    pub fn iterations(&self) -> usize {
        self.schedule.len()
    }
}

impl Default for ConvexConfig {
    fn default() -> Self {
        Self { schedule: vec![0.003, 0.01, 0.03, 0.1, 0.3, 1.0], smoothing_passes: 2 }
    }
}

/// Applies `passes` rounds of a 3x3x3 mean filter to every component.
/// Each pass accumulates in f64 (x, y, then z) and rounds to f32.
pub fn smooth_field(field: &DisplacementField, passes: usize) -> DisplacementField {
    let mut out = field.clone();
    let dims = field.dims();
    for _ in 0..passes {
        for c in 0..3 {
            let s = box_filter_f32(out.component(c), dims, [1, 1, 1]);
            out.component_mut(c).copy_from_slice(&s);
        }
    }
    out
}

/// Coupled convex optimisation.
///
/// Starting from the smoothed argmin field `h`, each iteration picks per node
/// the lattice displacement minimising `cost(g, d) + theta * |d - h(g)|^2`
/// and then smooths the result to obtain the next `h`. The penalty is
/// evaluated in f32 as `cost + theta * ((dx*dx + dy*dy) + dz*dz)`; ties go
/// to the lowest displacement index.
pub fn coupled_convex(cv: &CostVolume, cfg: &ConvexConfig) -> Result<DisplacementField> {
    cfg.validate()?;
    let search = cv.search();
    let disps: Vec<[f32; 3]> = search.displacements().iter().map(|d| d.map(|v| v as f32)).collect();
    let mut smooth = smooth_field(&argmin_field(cv), cfg.smoothing_passes);
    for &theta in &cfg.schedule {
        let best = par::map_range(cv.grid().len(), |node| {
            let h = smooth.get(node);
            let row = cv.node_costs(node);
            let mut best = 0;
            let mut best_val = f32::INFINITY;
            for (k, (&c, d)) in row.iter().zip(&disps).enumerate() {
                let dx = d[0] - h[0];
                let dy = d[1] - h[1];
                let dz = d[2] - h[2];
                let val = c + theta * (dx * dx + dy * dy + dz * dz);
                if val < best_val {
                    best = k;
                    best_val = val;
                }
            }
            best
        });
        let mut hard = DisplacementField::zeros(cv.grid(), cv.stride());
        for (node, &k) in best.iter().enumerate() {
            hard.set(node, disps[k]);
        }
        smooth = smooth_field(&hard, cfg.smoothing_passes);
    }
    Ok(smooth)
}

#[inline]
fn compose_sample(field: &DisplacementField, at: [f64; 3]) -> [f64; 3] {
    let st = Stencil::new(field.dims(), at);
    [st.value(field.component(0)), st.value(field.component(1)), st.value(field.component(2))]
}

/// Grid coordinate reached from node `i` by displacement `u` (in voxels).
#[inline]
fn target(field: &DisplacementField, i: usize, u: [f32; 3]) -> [f64; 3] {
    let g = field.dims().coords(i);
    let s = field.stride() as f64;
    [0, 1, 2].map(|a| g[a] as f64 + u[a] as f64 / s)
}

/// `max_x |fwd(x) + bwd(x + fwd(x))|` over the nodes of `fwd`.
pub fn inverse_consistency_residual(fwd: &DisplacementField, bwd: &DisplacementField) -> f64 {
    (0..fwd.dims().len())
        .map(|i| {
            let u = fwd.get(i);
            let b = compose_sample(bwd, target(fwd, i, u));
            let r = [0, 1, 2].map(|a| u[a] as f64 + b[a]);
            math::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2])
        })
        .fold(0.0, f64::max)
}

/// Jacobi symmetrisation of a forward/backward pair of coarse fields.
///
/// Every iteration replaces `fwd(x)` by `(fwd(x) - bwd(x + fwd(x))) / 2` and
/// `bwd(x)` by `(bwd(x) - fwd(x + bwd(x))) / 2`, both from the previous
/// pair. Composition samples trilinearly on the node grid (displacements are
/// divided by the stride to move in node units) with border clamping.
pub fn symmetrise(
    fwd: &DisplacementField,
    bwd: &DisplacementField,
    iterations: usize,
) -> Result<(DisplacementField, DisplacementField)> {
    if !fwd.same_grid(bwd) {
        bail!(
            ShapeMismatch,
            "forward grid {:?}/{} and backward grid {:?}/{} differ",
            fwd.dims().to_array(),
            fwd.stride(),
            bwd.dims().to_array(),
            bwd.stride()
        );
    }
    let mut f = fwd.clone();
    let mut b = bwd.clone();
    let n = f.dims().len();
    for _ in 0..iterations {
        let update = |a: &DisplacementField, other: &DisplacementField| {
            let vals = par::map_range(n, |i| {
                let u = a.get(i);
                let o = compose_sample(other, target(a, i, u));
                [0, 1, 2].map(|k| (0.5 * (u[k] as f64 - o[k])) as f32)
            });
            let mut out = DisplacementField::zeros(a.dims(), a.stride());
            for (i, v) in vals.into_iter().enumerate() {
                out.set(i, v);
            }
            out
        };
        let nf = update(&f, &b);
        let nb = update(&b, &f);
        f = nf;
        b = nb;
    }
    Ok((f, b))
}
