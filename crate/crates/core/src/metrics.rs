//! Warping and registration quality metrics: Dice, HD95, TRE, SDlogJ and
//! their cohort summaries.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Error, Result};
use crate::math;
use crate::par;
use crate::sample::{nearest_index, Stencil};
use crate::volume::{Dims, DisplacementField, LabelVolume, LandmarkSet, Spacing, Volume3D};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Interp {
    #[default]
    Linear,
    Nearest,
}

fn check_full_res(dims: Dims, disp: &DisplacementField) -> Result<()> {
    if disp.stride() != 1 || disp.dims() != dims {
        bail!(
            ShapeMismatch,
            "need a full-resolution field of size {:?}, got {:?} at stride {}",
            dims.to_array(),
            disp.dims().to_array(),
            disp.stride()
        );
    }
    Ok(())
}

#[inline]
fn warped_position(dims: Dims, disp: &DisplacementField, i: usize) -> [f64; 3] {
    let [x, y, z] = dims.coords(i);
    let u = disp.get(i);
    [x as f64 + u[0] as f64, y as f64 + u[1] as f64, z as f64 + u[2] as f64]
}

/// `out(x) = vol(x + u(x))`.
pub fn warp_volume(vol: &Volume3D, disp: &DisplacementField, interp: Interp) -> Result<Volume3D> {
    let dims = vol.dims();
    check_full_res(dims, disp)?;
    let src = vol.data();
    let data = par::map_range(dims.len(), |i| {
        let p = warped_position(dims, disp, i);
        match interp {
            Interp::Linear => Stencil::new(dims, p).value(src) as f32,
            Interp::Nearest => src[nearest_index(dims, p)],
        }
    });
    Volume3D::new(dims, vol.spacing(), data)
}

/// Nearest-neighbour warp of a label map.
pub fn warp_labels(labels: &LabelVolume, disp: &DisplacementField, interp: Interp) -> Result<LabelVolume> {
    if interp != Interp::Nearest {
        return Err(Error::LinearOnLabels);
    }
    let dims = labels.dims();
    check_full_res(dims, disp)?;
    let src = labels.data();
    let data = par::map_range(dims.len(), |i| src[nearest_index(dims, warped_position(dims, disp, i))]);
    LabelVolume::new(dims, labels.spacing(), data, labels.num_classes())
}

#[inline]
fn derivative(comp: &[f32], dims: Dims, c: [usize; 3], axis: usize) -> f64 {
    let n = dims.to_array()[axis];
    let at = |k: usize| {
        let mut p = c;
        p[axis] = k;
        comp[dims.index(p[0], p[1], p[2])] as f64
    };
    let k = c[axis];
    if n < 2 {
        0.0
    } else if k == 0 {
        at(1) - at(0)
    } else if k == n - 1 {
        at(n - 1) - at(n - 2)
    } else {
        (at(k + 1) - at(k - 1)) / 2.0
    }
}

fn jacobian_f64(disp: &DisplacementField) -> Vec<f64> {
    let dims = disp.dims();
    par::map_range(dims.len(), |i| {
        let c = dims.coords(i);
        let mut m = [[0.0f64; 3]; 3];
        for (r, row) in m.iter_mut().enumerate() {
            let comp = disp.component(r);
            for (a, v) in row.iter_mut().enumerate() {
                *v = derivative(comp, dims, c, a) + if r == a { 1.0 } else { 0.0 };
            }
        }
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    })
}

fn check_jacobian_input(disp: &DisplacementField) -> Result<()> {
    let d = disp.dims();
    if disp.stride() != 1 {
        bail!(ShapeMismatch, "Jacobian needs a full-resolution field, got stride {}", disp.stride());
    }
    if d.nx < 3 || d.ny < 3 || d.nz < 3 {
        bail!(TooSmall, "Jacobian needs at least 3 voxels per axis, got {:?}", d.to_array());
    }
    Ok(())
}

/// `det(I + grad u)` with central differences in voxel units, one-sided at
/// the borders. The determinant does not depend on voxel spacing.
pub fn jacobian_determinant(disp: &DisplacementField) -> Result<Volume3D> {
    check_jacobian_input(disp)?;
    let j = jacobian_f64(disp);
    Volume3D::new(disp.dims(), Spacing::UNIT, j.into_iter().map(|v| v as f32).collect())
}

/// Population standard deviation of `log(clamp(J, 1e-6, 1e6))` over voxels
/// not on the volume border.
pub fn sdlogj(disp: &DisplacementField) -> Result<f64> {
    check_jacobian_input(disp)?;
    let dims = disp.dims();
    let j = jacobian_f64(disp);
    let mut logs = Vec::with_capacity((dims.nx - 2) * (dims.ny - 2) * (dims.nz - 2));
    for z in 1..dims.nz - 1 {
        for y in 1..dims.ny - 1 {
            for x in 1..dims.nx - 1 {
                logs.push(math::ln(j[dims.index(x, y, z)].clamp(1e-6, 1e6)));
            }
        }
    }
    let n = logs.len() as f64;
    let mean = logs.iter().sum::<f64>() / n;
    let var = logs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(math::sqrt(var))
}

/// Per-class Dice overlap. `None` marks classes absent from both volumes.
#[derive(Clone, Debug, PartialEq)]
pub struct DiceScores {
    pub per_class: BTreeMap<u32, Option<f64>>,
    /// Mean over applicable classes; `None` if no class applies.
    pub mean: Option<f64>,
}

/// Dice `2|A ∩ B| / (|A| + |B|)` for every requested class.
pub fn dice(a: &LabelVolume, b: &LabelVolume, classes: &[u32]) -> Result<DiceScores> {
    if a.dims() != b.dims() {
        bail!(ShapeMismatch, "label volumes differ: {:?} vs {:?}", a.dims().to_array(), b.dims().to_array());
    }
    let mut per_class = BTreeMap::new();
    for &k in classes {
        let (mut na, mut nb, mut both) = (0u64, 0u64, 0u64);
        for (&la, &lb) in a.data().iter().zip(b.data()) {
            let (ia, ib) = (la == k, lb == k);
            na += ia as u64;
            nb += ib as u64;
            both += (ia && ib) as u64;
        }
        let score = if na + nb == 0 { None } else { Some(2.0 * both as f64 / (na + nb) as f64) };
        per_class.insert(k, score);
    }
    let applicable: Vec<f64> = per_class.values().flatten().copied().collect();
    let mean = if applicable.is_empty() { None } else { Some(applicable.iter().sum::<f64>() / applicable.len() as f64) };
    Ok(DiceScores { per_class, mean })
}

/// Class voxels with at least one 6-neighbour outside the class; the volume
/// border counts as outside.
pub fn surface_mask(labels: &LabelVolume, class: u32) -> Vec<bool> {
    let dims = labels.dims();
    let data = labels.data();
    let n = dims.to_array();
    (0..dims.len())
        .map(|i| {
            if data[i] != class {
                return false;
            }
            let c = dims.coords(i);
            for a in 0..3 {
                if c[a] == 0 || c[a] == n[a] - 1 {
                    return true;
                }
                for off in [-1isize, 1] {
                    let mut p = c;
                    p[a] = (c[a] as isize + off) as usize;
                    if data[dims.index(p[0], p[1], p[2])] != class {
                        return true;
                    }
                }
            }
            false
        })
        .collect()
}

/// One-dimensional squared distance transform (lower envelope of parabolas)
/// for sample spacing `h`. Infinite entries are not sites.
fn distance_1d(f: &[f64], h: f64, out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k: isize = -1;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        let fq = f[q] + (q as f64 * h) * (q as f64 * h);
        loop {
            if k < 0 {
                k = 0;
                v[0] = q;
                z[0] = f64::NEG_INFINITY;
                z[1] = f64::INFINITY;
                break;
            }
            let p = v[k as usize];
            let fp = f[p] + (p as f64 * h) * (p as f64 * h);
            let s = (fq - fp) / (2.0 * h * (q as f64 - p as f64));
            if s <= z[k as usize] {
                k -= 1;
                if k < 0 {
                    continue;
                }
            } else {
                k += 1;
                v[k as usize] = q;
                z[k as usize] = s;
                z[k as usize + 1] = f64::INFINITY;
                break;
            }
        }
    }
    if k < 0 {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut j = 0usize;
    for (p, o) in out.iter_mut().enumerate() {
        let x = p as f64 * h;
        while z[j + 1] < x {
            j += 1;
        }
        let d = (p as f64 - v[j] as f64) * h;
        *o = d * d + f[v[j]];
    }
}

/// Exact squared Euclidean distance (mm^2) from every voxel to the nearest
/// `true` voxel of `sites`.
pub fn squared_distance_transform(sites: &[bool], dims: Dims, spacing: Spacing) -> Vec<f64> {
    let mut cur: Vec<f64> = sites.iter().map(|&s| if s { 0.0 } else { f64::INFINITY }).collect();
    let n = dims.to_array();
    for axis in 0..3 {
        let step = match axis {
            0 => 1,
            1 => dims.nx,
            _ => dims.nx * dims.ny,
        };
        let len = n[axis];
        let mut line = vec![0.0; len];
        let mut out = vec![0.0; len];
        for start in 0..dims.len() {
            if dims.coords(start)[axis] != 0 {
                continue;
            }
            for k in 0..len {
                line[k] = cur[start + k * step];
            }
            distance_1d(&line, spacing.0[axis], &mut out);
            for k in 0..len {
                cur[start + k * step] = out[k];
            }
        }
    }
    cur
}

fn percentile95(mut d: Vec<f64>) -> f64 {
    d.sort_by(|a, b| a.total_cmp(b));
    let rank = (95 * d.len()).div_ceil(100);
    d[rank.max(1) - 1]
}

/// Symmetric 95th-percentile surface distance (mm) for one class, using the
/// nearest-rank percentile.
pub fn hd95(a: &LabelVolume, b: &LabelVolume, class: u32, spacing: Spacing) -> Result<f64> {
    if a.dims() != b.dims() {
        bail!(ShapeMismatch, "label volumes differ: {:?} vs {:?}", a.dims().to_array(), b.dims().to_array());
    }
    let sa = surface_mask(a, class);
    let sb = surface_mask(b, class);
    if !sa.contains(&true) || !sb.contains(&true) {
        return Err(Error::ClassAbsent(class));
    }
    let directed = |from: &[bool], to: &[bool]| {
        let dt = squared_distance_transform(to, a.dims(), spacing);
        let d: Vec<f64> = from.iter().zip(&dt).filter(|(s, _)| **s).map(|(_, &d2)| math::sqrt(d2)).collect();
        percentile95(d)
    };
    Ok(directed(&sa, &sb).max(directed(&sb, &sa)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreScores {
    pub per_landmark: Vec<f64>,
    pub mean: f64,
}

/// Target registration error in mm: `|(p_f + u(p_f) - p_m) * spacing|`.
pub fn tre(fixed: &LandmarkSet, moving: &LandmarkSet, disp: &DisplacementField, spacing: Spacing) -> Result<TreScores> {
    if fixed.len() != moving.len() {
        bail!(ShapeMismatch, "landmark counts differ: {} vs {}", fixed.len(), moving.len());
    }
    if fixed.is_empty() {
        return Err(Error::Empty("landmarks"));
    }
    if disp.stride() != 1 {
        bail!(ShapeMismatch, "TRE needs a full-resolution field, got stride {}", disp.stride());
    }
    let dims = disp.dims();
    let per_landmark: Vec<f64> = fixed
        .points()
        .iter()
        .zip(moving.points())
        .map(|(pf, pm)| {
            let st = Stencil::new(dims, *pf);
            let mut sq = 0.0;
            for a in 0..3 {
                let u = st.value(disp.component(a));
                let e = (pf[a] + u - pm[a]) * spacing.0[a];
                sq += e * e;
            }
            math::sqrt(sq)
        })
        .collect();
    let mean = per_landmark.iter().sum::<f64>() / per_landmark.len() as f64;
    Ok(TreScores { per_landmark, mean })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceScores {
    pub per_class: BTreeMap<u32, f64>,
    pub mean: f64,
}

/// Metrics of one registered case. Fields are `None` when not computed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub dice: Option<DiceScores>,
    pub hd95: Option<SurfaceScores>,
    pub tre: Option<TreScores>,
    pub sdlogj: Option<f64>,
    pub dice30: Option<f64>,
    pub tre30: Option<f64>,
}

/// Scores a full-resolution field.
///
/// Moving labels are warped with nearest-neighbour sampling and compared to
/// the fixed labels over every foreground class present in either map. HD95
/// covers classes present in both. SDlogJ is always reported.
pub fn evaluate(
    disp: &DisplacementField,
    labels: Option<(&LabelVolume, &LabelVolume)>,
    landmarks: Option<(&LandmarkSet, &LandmarkSet)>,
    spacing: Spacing,
) -> Result<MetricReport> {
    if labels.is_none() && landmarks.is_none() {
        return Err(Error::Empty("labels or landmarks"));
    }
    let mut report = MetricReport { sdlogj: Some(sdlogj(disp)?), ..Default::default() };
    if let Some((fixed, moving)) = labels {
        let warped = warp_labels(moving, disp, Interp::Nearest)?;
        let mut classes: Vec<u32> = fixed.present_classes();
        classes.extend(moving.present_classes());
        classes.sort_unstable();
        classes.dedup();
        classes.retain(|&k| k != 0);
        report.dice = Some(dice(fixed, &warped, &classes)?);
        let mut per_class = BTreeMap::new();
        for &k in &classes {
            match hd95(fixed, &warped, k, spacing) {
                Ok(v) => {
                    per_class.insert(k, v);
                }
                Err(Error::ClassAbsent(_)) => {}
                Err(e) => return Err(e),
            }
        }
        if !per_class.is_empty() {
            let mean = per_class.values().sum::<f64>() / per_class.len() as f64;
            report.hd95 = Some(SurfaceScores { per_class, mean });
        }
    }
    if let Some((fixed, moving)) = landmarks {
        report.tre = Some(tre(fixed, moving, disp, spacing)?);
    }
    Ok(report)
}

/// Summary over a cohort of cases.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CohortSummary {
    pub cases: usize,
    pub mean_dice: Option<f64>,
    /// Mean of the lowest `ceil(0.3 n)` per-case mean Dice scores.
    pub dice30: Option<f64>,
    pub mean_hd95: Option<f64>,
    pub mean_tre: Option<f64>,
    /// Mean of the highest `ceil(0.3 n)` per-case mean TREs.
    pub tre30: Option<f64>,
    pub mean_sdlogj: Option<f64>,
}

fn mean(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Mean of the `ceil(0.3 n)` smallest values (`worst_high` selects the largest).
pub fn worst_30(values: &[f64], worst_high: bool) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    if worst_high {
        v.reverse();
    }
    let k = (3 * v.len()).div_ceil(10);
    mean(&v[..k])
}

pub fn cohort_stats(cases: &[MetricReport]) -> Result<CohortSummary> {
    if cases.is_empty() {
        return Err(Error::Empty("cohort"));
    }
    let dices: Vec<f64> = cases.iter().filter_map(|c| c.dice.as_ref().and_then(|d| d.mean)).collect();
    let hds: Vec<f64> = cases.iter().filter_map(|c| c.hd95.as_ref().map(|h| h.mean)).collect();
    let tres: Vec<f64> = cases.iter().filter_map(|c| c.tre.as_ref().map(|t| t.mean)).collect();
    let sds: Vec<f64> = cases.iter().filter_map(|c| c.sdlogj).collect();
    Ok(CohortSummary {
        cases: cases.len(),
        mean_dice: mean(&dices),
        dice30: worst_30(&dices, false),
        mean_hd95: mean(&hds),
        mean_tre: mean(&tres),
        tre30: worst_30(&tres, true),
        mean_sdlogj: mean(&sds),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(dims: Dims, f: impl Fn(usize, usize, usize) -> u32) -> LabelVolume {
        let data = (0..dims.len()).map(|i| {
            let [x, y, z] = dims.coords(i);
            f(x, y, z)
        });
        LabelVolume::from_labels(dims, Spacing::UNIT, data.collect()).unwrap()
    }

    #[test]
    fn dice_by_hand() {
        let d = Dims::new(16, 1, 1);
        let a = labels(d, |x, _, _| (x < 8) as u32);
        let b = labels(d, |x, _, _| (4 <= x && x < 12) as u32);
        let s = dice(&a, &b, &[1, 2]).unwrap();
        assert_eq!(s.per_class[&1], Some(0.5));
        assert_eq!(s.per_class[&2], None);
        assert_eq!(s.mean, Some(0.5));
        let c = labels(d, |x, _, _| (x >= 8) as u32);
        assert_eq!(dice(&a, &c, &[1]).unwrap().per_class[&1], Some(0.0));
    }

    #[test]
    fn hd95_single_voxels() {
        let d = Dims::new(3, 8, 3);
        let a = labels(d, |x, y, z| (x == 1 && y == 1 && z == 1) as u32);
        let b = labels(d, |x, y, z| (x == 1 && y == 6 && z == 1) as u32);
        let sp = Spacing::new(1.0, 2.0, 1.0).unwrap();
        assert_eq!(hd95(&a, &b, 1, sp).unwrap(), 10.0);
        assert_eq!(hd95(&a, &a, 1, sp).unwrap(), 0.0);
        assert!(matches!(hd95(&a, &b, 2, sp), Err(Error::ClassAbsent(2))));
    }

    #[test]
    fn tre_by_hand() {
        let d = Dims::cube(8);
        let f = LandmarkSet::new(vec![[1.0, 2.0, 3.0], [4.0, 4.5, 2.0]]);
        let m = LandmarkSet::new(vec![[4.0, 2.0, 3.0], [7.0, 4.5, 2.0]]);
        let sp = Spacing::new(1.75, 1.25, 1.75).unwrap();
        let zero = DisplacementField::zeros(d, 1);
        let t = tre(&f, &m, &zero, sp).unwrap();
        for e in &t.per_landmark {
            assert!((e - 5.25).abs() < 1e-12);
        }
        let shift = DisplacementField::constant(d, 1, [3.0, 0.0, 0.0]);
        assert_eq!(tre(&f, &m, &shift, sp).unwrap().mean, 0.0);
        assert_eq!(tre(&f, &f, &zero, sp).unwrap().mean, 0.0);
        assert!(tre(&f, &LandmarkSet::new(vec![]), &zero, sp).is_err());
    }

    #[test]
    fn jacobian_of_linear_fields() {
        let d = Dims::cube(6);
        let zero = DisplacementField::zeros(d, 1);
        assert!(jacobian_determinant(&zero).unwrap().data().iter().all(|&j| j == 1.0));
        assert_eq!(sdlogj(&zero).unwrap(), 0.0);
        let a = 0.2f32;
        let lin = DisplacementField::from_fn(d, 1, |x, _, _| [a * x as f32, 0.0, 0.0]).unwrap();
        let j = jacobian_determinant(&lin).unwrap();
        assert!(j.data().iter().all(|&v| (v - 1.2).abs() < 1e-6));
        assert!(sdlogj(&lin).unwrap() < 1e-6);
    }

    #[test]
    fn warp_identity_and_translation() {
        let d = Dims::cube(6);
        let v = Volume3D::from_fn(d, Spacing::UNIT, |x, y, z| (x * 31 + y * 7 + z) as f32).unwrap();
        let zero = DisplacementField::zeros(d, 1);
        assert_eq!(warp_volume(&v, &zero, Interp::Nearest).unwrap(), v);
        assert_eq!(warp_volume(&v, &zero, Interp::Linear).unwrap(), v);
        let t = DisplacementField::constant(d, 1, [1.0, -1.0, 2.0]);
        let w = warp_volume(&v, &t, Interp::Linear).unwrap();
        assert_eq!(w.at(2, 3, 1), v.at(3, 2, 3));
        let ramp = Volume3D::from_fn(d, Spacing::UNIT, |x, _, _| x as f32).unwrap();
        let half = DisplacementField::constant(d, 1, [0.5, 0.0, 0.0]);
        let w = warp_volume(&ramp, &half, Interp::Linear).unwrap();
        assert_eq!(w.at(2, 1, 1), 2.5);
        let l = LabelVolume::from_labels(d, Spacing::UNIT, vec![1; d.len()]).unwrap();
        assert!(matches!(warp_labels(&l, &zero, Interp::Linear), Err(Error::LinearOnLabels)));
        assert_eq!(warp_labels(&l, &zero, Interp::Nearest).unwrap(), l);
        let coarse = DisplacementField::zeros(d, 2);
        assert!(warp_volume(&v, &coarse, Interp::Linear).is_err());
    }

    #[test]
    fn cohort_by_hand() {
        let case = |d: f64, t: f64| MetricReport {
            dice: Some(DiceScores { per_class: BTreeMap::new(), mean: Some(d) }),
            tre: Some(TreScores { per_landmark: vec![t], mean: t }),
            ..Default::default()
        };
        let cases: Vec<_> = (1..=10).map(|i| case(i as f64 / 10.0, i as f64)).collect();
        let s = cohort_stats(&cases).unwrap();
        assert!((s.dice30.unwrap() - 0.2).abs() < 1e-12);
        assert!((s.tre30.unwrap() - 9.0).abs() < 1e-12);
        let one = cohort_stats(&cases[3..4]).unwrap();
        assert_eq!(one.dice30, Some(0.4));
        assert!(cohort_stats(&[]).is_err());
    }

    #[test]
    fn evaluate_needs_something() {
        let zero = DisplacementField::zeros(Dims::cube(4), 1);
        assert!(evaluate(&zero, None, None, Spacing::UNIT).is_err());
    }
}
