//! Registration settings, task presets and TOML config files.
//!
//! A config file is a TOML table whose keys mirror [`RegistrationConfig`].
//! It is merged over a preset (or the defaults), so a file only lists what
//! it changes:
//!
//! ```toml
//! capture_mm = [24.0, 24.0, 24.0]
//! stride = 3
//!
//! [instance]
//! iterations = 80
//! ```

use std::fmt::Write as _;
use std::path::Path;

use deformreg_core::{ConvexConfig, InstanceOptConfig, Interp, MindConfig, SearchSpace, Spacing};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    /// Self-similarity descriptors of the intensity images.
    Mind,
    /// Class-weighted one-hot encodings of the label maps.
    Segmentation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationConfig {
    pub features: FeatureMode,
    pub mind: MindConfig,
    /// Search range per axis in mm.
    pub capture_mm: [f64; 3],
    /// Largest allowed number of displacements.
    pub budget: usize,
    /// Voxels per displacement step; 0 picks the smallest step within budget.
    pub quantisation: usize,
    /// Control-grid stride in voxels.
    pub stride: usize,
    /// Box radius for the patch SSD.
    pub patch_radius: usize,
    /// Weight of `|d|^2` added to the normalised costs; breaks ties toward
    /// small displacements.
    pub motion_penalty: f32,
    pub convex: ConvexConfig,
    pub instance: InstanceOptConfig,
    /// Estimate a backward field too and symmetrise the pair.
    pub inverse_consistency: bool,
    pub symmetrise_iterations: usize,
    /// Interpolation for the warped output image.
    pub interp: Interp,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            features: FeatureMode::Mind,
            mind: MindConfig::default(),
            capture_mm: [32.0; 3],
            budget: deformreg_core::DISPLACEMENT_BUDGET,
            quantisation: 0,
            stride: 2,
            patch_radius: 1,
            motion_penalty: 1e-5,
            convex: ConvexConfig::default(),
            instance: InstanceOptConfig::default(),
            inverse_consistency: false,
            symmetrise_iterations: 10,
            interp: Interp::Linear,
        }
    }
}

pub const PRESETS: [&str; 3] = ["task1", "task2", "task3"];

/// Voxel spacing (mm) each preset was sized for.
pub fn native_spacing(name: &str) -> Result<Spacing> {
    let s = match name {
        "task1" => [2.0, 2.0, 2.0],
        "task2" => [1.75, 1.25, 1.75],
        "task3" => [1.0, 1.0, 1.0],
        _ => return Err(unknown_preset(name)),
    };
    Ok(Spacing(s))
}

fn unknown_preset(name: &str) -> Error {
    Error::Config(format!("unknown preset {name:?} (available: {})", PRESETS.join(", ")))
}

/// Built-in settings for one of [`PRESETS`]. Each preset is checked against
/// its displacement budget at its native spacing.
pub fn preset(name: &str) -> Result<RegistrationConfig> {
    let base = RegistrationConfig::default();
    let cfg = match name {
        "task1" => RegistrationConfig { capture_mm: [64.0; 3], inverse_consistency: true, ..base },
        "task2" => RegistrationConfig { capture_mm: [42.0, 30.0, 42.0], ..base },
        "task3" => RegistrationConfig {
            features: FeatureMode::Segmentation,
            mind: MindConfig { dilation: 1, patch_radius: 1 },
            capture_mm: [16.0; 3],
            stride: 3,
            // one-hot losses are an order of magnitude smaller than MIND losses
            instance: InstanceOptConfig { diffusion_weight: 0.01, ..base.instance.clone() },
            ..base
        },
        _ => return Err(unknown_preset(name)),
    };
    cfg.search_space(native_spacing(name)?)?;
    Ok(cfg)
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capture_mm.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(Error::Config(format!("capture range must be positive, got {:?}", self.capture_mm)));
        }
        if self.stride == 0 {
            return Err(Error::Config("stride must be at least 1".into()));
        }
        if !(self.motion_penalty.is_finite() && self.motion_penalty >= 0.0) {
            return Err(Error::Config(format!("motion penalty must be non-negative, got {}", self.motion_penalty)));
        }
        if self.budget == 0 {
            return Err(Error::Config("displacement budget must be positive".into()));
        }
        self.mind.validate()?;
        self.convex.validate()?;
        self.instance.validate()?;
        Ok(())
    }

    /// Displacement lattice for images of the given spacing.
    pub fn search_space(&self, spacing: Spacing) -> Result<SearchSpace> {
        self.validate()?;
        let q = (self.quantisation > 0).then_some(self.quantisation);
        SearchSpace::plan(self.capture_mm, spacing, self.budget, q).map_err(|e| match e {
            deformreg_core::Error::InvalidConfig(msg) => Error::Config(msg),
            e => e.into(),
        })
    }

    /// Merges a TOML document over `self`. Unknown keys are errors.
    pub fn merge_toml(&self, text: &str, origin: &str) -> Result<Self> {
        let patch: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(format!("{origin}: {}", e.message())))?;
        let mut base = toml::Value::try_from(self).expect("config serialises");
        merge(&mut base, patch, "", origin)?;
        let cfg: Self = base.try_into().map_err(|e: toml::de::Error| Error::Config(format!("{origin}: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn merge_file(&self, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.merge_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}

fn merge(base: &mut toml::Value, patch: toml::Table, prefix: &str, origin: &str) -> Result<()> {
    let table = base.as_table_mut().expect("merge target is a table");
    for (key, value) in patch {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match (table.get_mut(&key), value) {
            (None, _) => return Err(Error::Config(format!("{origin}: unknown key {path:?}"))),
            (Some(slot @ toml::Value::Table(_)), toml::Value::Table(sub)) => merge(slot, sub, &path, origin)?,
            (Some(slot), value) => {
                // integers are accepted where floats are expected
                *slot = match (&*slot, value) {
                    (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
                    (toml::Value::Array(old), toml::Value::Array(new))
                        if old.first().is_some_and(|v| v.is_float()) =>
                    {
                        toml::Value::Array(
                            new.into_iter()
                                .map(|v| match v {
                                    toml::Value::Integer(i) => toml::Value::Float(i as f64),
                                    v => v,
                                })
                                .collect(),
                        )
                    }
                    (_, v) => v,
                };
            }
        }
    }
    Ok(())
}

/// Table of the shipped presets with their lattices at native spacing.
pub fn preset_table() -> Result<String> {
    let mut out = String::new();
    writeln!(
        out,
        "{:<6} {:<12} {:<18} {:<18} {:>6} {:>5} {:>8} {:>5} {:>7}",
        "name", "features", "capture_mm", "spacing_mm", "stride", "q", "extent", "count", "inverse"
    )
    .unwrap();
    for name in PRESETS {
        let cfg = preset(name)?;
        let spacing = native_spacing(name)?;
        let search = cfg.search_space(spacing)?;
        let mode = match cfg.features {
            FeatureMode::Mind => "mind",
            FeatureMode::Segmentation => "segmentation",
        };
        let fmt3 = |v: [f64; 3]| format!("{}x{}x{}", v[0], v[1], v[2]);
        let e = search.extent;
        writeln!(
            out,
            "{:<6} {:<12} {:<18} {:<18} {:>6} {:>5} {:>8} {:>5} {:>7}",
            name,
            mode,
            fmt3(cfg.capture_mm),
            fmt3(spacing.0),
            cfg.stride,
            search.quantisation,
            format!("{}x{}x{}", e[0], e[1], e[2]),
            search.count(),
            if cfg.inverse_consistency { "on" } else { "off" }
        )
        .unwrap();
    }
    Ok(out)
}
