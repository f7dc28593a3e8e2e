//! The registration pipeline and its evaluation.

use std::time::Instant;

use deformreg_core::{
    adam_optimise, build_cost_volume, coupled_convex, evaluate, inverse_consistency_residual, mind_ssc,
    seg_onehot_features, smooth_and_upsample, symmetrise, CostVolume, DisplacementField, Error as CoreError,
    FeatureVolume, LabelVolume, LandmarkSet, MetricReport, SearchSpace, Spacing, Volume3D,
};

use crate::config::{FeatureMode, RegistrationConfig};
use crate::error::{Error, Result};

/// What a run did, stage by stage.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Diagnostics {
    /// `(stage, seconds)` in execution order.
    pub stages: Vec<(&'static str, f64)>,
    pub search: Option<SearchSpace>,
    /// Adam loss before every step.
    pub losses: Vec<f64>,
    /// Inverse-consistency residual before and after symmetrisation.
    pub residual: Option<(f64, f64)>,
}

#[derive(Clone, Debug)]
pub struct Registration {
    /// Full-resolution field in voxels of the fixed image.
    pub field: DisplacementField,
    /// Refined control grid.
    pub coarse: DisplacementField,
    pub diagnostics: Diagnostics,
}

struct Timer<'a> {
    diag: &'a mut Diagnostics,
}

impl Timer<'_> {
    fn run<T>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f()?;
        self.diag.stages.push((stage, t.elapsed().as_secs_f64()));
        Ok(out)
    }
}

fn same_spacing(a: Spacing, b: Spacing) -> bool {
    a.0.iter().zip(b.0).all(|(x, y)| (x - y).abs() <= 1e-6 * x.abs().max(y.abs()))
}

fn check_pair(what: &str, a: (deformreg_core::Dims, Spacing), b: (deformreg_core::Dims, Spacing)) -> Result<()> {
    if a.0 != b.0 {
        return Err(CoreError::ShapeMismatch(format!(
            "{what}: dims {:?} and {:?} differ",
            a.0.to_array(),
            b.0.to_array()
        ))
        .into());
    }
    if !same_spacing(a.1, b.1) {
        return Err(CoreError::ShapeMismatch(format!("{what}: spacing {:?} and {:?} differ", a.1 .0, b.1 .0)).into());
    }
    Ok(())
}

pub fn register(
    fixed: &Volume3D,
    moving: &Volume3D,
    labels: Option<(&LabelVolume, &LabelVolume)>,
    cfg: &RegistrationConfig,
) -> Result<Registration> {
    register_with(fixed, moving, labels, cfg, |_| Ok(()))
}

/// Like [`register`]; `on_costs` sees the forward cost volume.
pub fn register_with(
    fixed: &Volume3D,
    moving: &Volume3D,
    labels: Option<(&LabelVolume, &LabelVolume)>,
    cfg: &RegistrationConfig,
    mut on_costs: impl FnMut(&CostVolume) -> Result<()>,
) -> Result<Registration> {
    cfg.validate()?;
    check_pair("fixed and moving images", (fixed.dims(), fixed.spacing()), (moving.dims(), moving.spacing()))?;
    let search = cfg.search_space(fixed.spacing())?;
    let mut diag = Diagnostics { search: Some(search), ..Default::default() };
    let mut timer = Timer { diag: &mut diag };

    let (ff, fm): (FeatureVolume, FeatureVolume) = timer.run("features", || match cfg.features {
        FeatureMode::Mind => Ok((mind_ssc(fixed, &cfg.mind)?, mind_ssc(moving, &cfg.mind)?)),
        FeatureMode::Segmentation => {
            let (lf, lm) = labels.ok_or_else(|| {
                Error::Input("segmentation features need both --fixed-seg and --moving-seg".into())
            })?;
            check_pair("fixed image and fixed labels", (fixed.dims(), fixed.spacing()), (lf.dims(), lf.spacing()))?;
            check_pair("fixed and moving labels", (lf.dims(), lf.spacing()), (lm.dims(), lm.spacing()))?;
            // label maps may miss classes present in the other one
            let k = lf.num_classes().max(lm.num_classes());
            let lf = lf.clone().with_num_classes(k)?;
            let lm = lm.clone().with_num_classes(k)?;
            Ok(seg_onehot_features(&lf, &lm)?)
        }
    })?;

    let costs = |a: &FeatureVolume, b: &FeatureVolume| -> Result<CostVolume> {
        Ok(build_cost_volume(a, b, cfg.stride, &search, cfg.patch_radius)?
            .normalised()
            .with_motion_penalty(cfg.motion_penalty))
    };
    let cv = timer.run("cost", || costs(&ff, &fm))?;
    on_costs(&cv)?;
    let mut grid = timer.run("convex", || Ok(coupled_convex(&cv, &cfg.convex)?))?;
    drop(cv);

    if cfg.inverse_consistency {
        let bwd = timer.run("cost_backward", || costs(&fm, &ff))?;
        let bwd = timer.run("convex_backward", || Ok(coupled_convex(&bwd, &cfg.convex)?))?;
        let (f, b) = timer.run("symmetrise", || Ok(symmetrise(&grid, &bwd, cfg.symmetrise_iterations)?))?;
        let before = inverse_consistency_residual(&grid, &bwd);
        let after = inverse_consistency_residual(&f, &b);
        timer.diag.residual = Some((before, after));
        grid = f;
    }

    let outcome = timer.run("adam", || Ok(adam_optimise(&grid, &ff, &fm, &cfg.instance)?))?;
    let field = timer.run("upsample", || {
        Ok(smooth_and_upsample(&outcome.params, cfg.instance.smoothing_passes, fixed.dims())?)
    })?;
    diag.losses = outcome.losses;
    Ok(Registration { field, coarse: outcome.params, diagnostics: diag })
}

/// Brings a field to full resolution on `dims` (plain trilinear upsampling
/// for control grids).
pub fn full_resolution(field: DisplacementField, dims: deformreg_core::Dims) -> Result<DisplacementField> {
    if field.stride() == 1 {
        if field.dims() != dims {
            return Err(CoreError::ShapeMismatch(format!(
                "field covers {:?} but the image is {:?}",
                field.dims().to_array(),
                dims.to_array()
            ))
            .into());
        }
        return Ok(field);
    }
    let expected = dims.node_grid(field.stride())?;
    if expected != field.dims() {
        return Err(CoreError::ShapeMismatch(format!(
            "control grid {:?} at stride {} does not match image {:?} (expected grid {:?})",
            field.dims().to_array(),
            field.stride(),
            dims.to_array(),
            expected.to_array()
        ))
        .into());
    }
    Ok(smooth_and_upsample(&field, 0, dims)?)
}

/// Scores a full-resolution field against labels and/or landmarks.
pub fn evaluate_case(
    field: &DisplacementField,
    labels: Option<(&LabelVolume, &LabelVolume)>,
    landmarks: Option<(&LandmarkSet, &LandmarkSet)>,
    spacing: Spacing,
) -> Result<MetricReport> {
    if let Some((f, m)) = labels {
        check_pair("fixed and moving labels", (f.dims(), f.spacing()), (m.dims(), m.spacing()))?;
    }
    if labels.is_none() && landmarks.is_none() {
        return Err(Error::Input("nothing to evaluate: give label maps and/or landmarks".into()));
    }
    Ok(evaluate(field, labels, landmarks, spacing)?)
}
