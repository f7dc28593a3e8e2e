//! Command-line front end.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use deformreg_core::{mind_ssc, seg_onehot_features, warp_labels, warp_volume, Interp, MetricReport};
use serde_json::Value;

use crate::config::{self, FeatureMode, RegistrationConfig};
use crate::error::{Error, Result};
use crate::io;
use crate::pipeline::{self, Registration};
use crate::report::Report;

#[derive(Debug, Parser)]
#[command(name = "deformreg", version, about = "Deformable 3D image registration")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Print stage timings and add timings and Adam losses to reports.
    #[arg(long, short, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Register a moving image to a fixed image.
    Register(RegisterArgs),
    /// Apply a displacement field to an image or label map.
    Warp(WarpArgs),
    /// Score a displacement field with labels and/or landmarks.
    Evaluate(EvaluateArgs),
    /// Write the feature volume used for matching.
    Features(FeaturesArgs),
    /// Print the shipped presets, or one preset as TOML.
    Presets(PresetsArgs),
}

#[derive(Debug, Args, Default, Clone)]
pub struct Settings {
    /// Starting preset: task1, task2 or task3.
    #[arg(long)]
    pub preset: Option<String>,
    /// TOML file merged over the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Interpolation for warped images (overrides the config).
    #[arg(long, value_enum)]
    pub interp: Option<InterpArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum InterpArg {
    Linear,
    Nearest,
}

impl From<InterpArg> for Interp {
    fn from(v: InterpArg) -> Self {
        match v {
            InterpArg::Linear => Interp::Linear,
            InterpArg::Nearest => Interp::Nearest,
        }
    }
}

impl Settings {
    pub fn resolve(&self) -> Result<RegistrationConfig> {
        let mut cfg = match &self.preset {
            Some(name) => config::preset(name)?,
            None => RegistrationConfig::default(),
        };
        if let Some(path) = &self.config {
            cfg = cfg.merge_file(path)?;
        }
        if let Some(i) = self.interp {
            cfg.interp = i.into();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args, Default, Clone)]
pub struct CaseArgs {
    #[arg(long)]
    pub fixed: Option<PathBuf>,
    #[arg(long)]
    pub moving: Option<PathBuf>,
    #[arg(long)]
    pub fixed_seg: Option<PathBuf>,
    #[arg(long)]
    pub moving_seg: Option<PathBuf>,
    /// CSV of `x,y,z` voxel coordinates in the fixed image.
    #[arg(long)]
    pub landmarks_fixed: Option<PathBuf>,
    /// CSV of corresponding points in the moving image.
    #[arg(long)]
    pub landmarks_moving: Option<PathBuf>,
    /// Output displacement field (.nii, .nii.gz, .json or .raw).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the moving image warped into the fixed frame.
    #[arg(long)]
    pub warped: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    #[command(flatten)]
    pub case: CaseArgs,
    #[command(flatten)]
    pub settings: Settings,
    /// JSON report path.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Run every case listed in this file (one `key=value ...` line per case).
    #[arg(long, conflicts_with_all = ["fixed", "moving", "fixed_seg", "moving_seg", "landmarks_fixed", "landmarks_moving", "out", "warped"])]
    pub batch: Option<PathBuf>,
    /// Dump the forward cost volume (raw + JSON sidecar).
    #[arg(long)]
    pub dump_costs: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct WarpArgs {
    /// Image or label map to warp.
    #[arg(long)]
    pub moving: PathBuf,
    #[arg(long)]
    pub field: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Fixed image; needed to upsample a control-grid field and reused as output geometry.
    #[arg(long)]
    pub fixed: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "linear")]
    pub interp: InterpArg,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub field: PathBuf,
    /// Fixed image, for grid size and spacing when no labels are given.
    #[arg(long)]
    pub fixed: Option<PathBuf>,
    #[arg(long)]
    pub fixed_seg: Option<PathBuf>,
    #[arg(long)]
    pub moving_seg: Option<PathBuf>,
    #[arg(long)]
    pub landmarks_fixed: Option<PathBuf>,
    #[arg(long)]
    pub landmarks_moving: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    /// Image to describe (MIND mode).
    #[arg(long)]
    pub fixed: Option<PathBuf>,
    #[arg(long)]
    pub fixed_seg: Option<PathBuf>,
    #[arg(long)]
    pub moving_seg: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Segmentation mode: where to put the moving-side encoding.
    #[arg(long)]
    pub out_moving: Option<PathBuf>,
    #[command(flatten)]
    pub settings: Settings,
}

#[derive(Debug, Args)]
pub struct PresetsArgs {
    /// Print this preset as a TOML config.
    pub name: Option<String>,
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Input(format!("missing --{flag}")))
}

fn pair<'a>(a: &'a Option<PathBuf>, b: &'a Option<PathBuf>, what: &str) -> Result<Option<(&'a Path, &'a Path)>> {
    match (a, b) {
        (Some(a), Some(b)) => Ok(Some((a, b))),
        (None, None) => Ok(None),
        _ => Err(Error::Input(format!("{what} must be given for both images"))),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        // fails only if a pool already exists (e.g. called twice in-process)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let verbose = cli.verbose;
    match cli.command {
        Command::Register(a) => register(a, verbose),
        Command::Warp(a) => warp(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Features(a) => features(a),
        Command::Presets(a) => {
            match a.name {
                Some(name) => print!("{}", config::preset(&name)?.to_toml()),
                None => print!("{}", config::preset_table()?),
            }
            Ok(())
        }
    }
}

/// Registers one case and fills `report` with its keys under `prefix`.
fn run_case(
    case: &CaseArgs,
    cfg: &RegistrationConfig,
    dump_costs: Option<&Path>,
    verbose: bool,
    report: &mut Report,
    prefix: &str,
) -> Result<MetricReport> {
    let fixed_path = required(&case.fixed, "fixed")?;
    let fixed = io::load_volume(fixed_path)?;
    let moving = io::load_volume(required(&case.moving, "moving")?)?;
    let labels = match pair(&case.fixed_seg, &case.moving_seg, "--fixed-seg/--moving-seg")? {
        Some((f, m)) => Some((io::load_labels(f)?, io::load_labels(m)?)),
        None => None,
    };
    let landmarks = match pair(&case.landmarks_fixed, &case.landmarks_moving, "landmarks")? {
        Some((f, m)) => {
            Some((io::load_landmarks(f, Some(fixed.dims()))?, io::load_landmarks(m, Some(moving.dims()))?))
        }
        None => None,
    };
    let label_refs = labels.as_ref().map(|(a, b)| (a, b));

    let Registration { field, diagnostics, .. } = pipeline::register_with(&fixed, &moving, label_refs, cfg, |cv| {
        dump_costs.map_or(Ok(()), |p| io::save_cost_volume(p, cv))
    })?;

    let template = io::read_image(fixed_path).ok().and_then(|i| i.header);
    if let Some(out) = &case.out {
        io::save_field(out, &field, fixed.spacing(), template.as_ref())?;
    }
    if let Some(out) = &case.warped {
        io::save_volume(out, &warp_volume(&moving, &field, cfg.interp)?, template.as_ref())?;
    }

    let key = |k: &str| format!("{prefix}{k}");
    if let Some(s) = &diagnostics.search {
        report.set(key("search.extent"), Value::from(s.extent.to_vec()));
        report.set(key("search.quantisation"), Value::from(s.quantisation));
        report.set(key("search.count"), Value::from(s.count()));
    }
    let stages: Vec<&str> = diagnostics.stages.iter().map(|(s, _)| *s).collect();
    report.set(key("stages"), Value::from(stages));
    if let Some((before, after)) = diagnostics.residual {
        report.set_num(key("inverse_consistency.residual_before"), before);
        report.set_num(key("inverse_consistency.residual_after"), after);
    }
    if verbose {
        for (stage, secs) in &diagnostics.stages {
            report.set_num(key(&format!("timing.{stage}")), *secs);
            eprintln!("{prefix}{stage}: {secs:.3} s");
        }
        report.set(key("adam.loss"), Value::from(diagnostics.losses.clone()));
    }

    let metrics = if labels.is_some() || landmarks.is_some() {
        let lm = landmarks.as_ref().map(|(a, b)| (a, b));
        pipeline::evaluate_case(&field, label_refs, lm, fixed.spacing())?
    } else {
        MetricReport { sdlogj: deformreg_core::sdlogj(&field).ok(), ..Default::default() }
    };
    report.add_metrics(prefix, &metrics);
    Ok(metrics)
}

fn register(a: RegisterArgs, verbose: bool) -> Result<()> {
    let cfg = a.settings.resolve()?;
    let mut report = Report::new();
    match &a.batch {
        None => {
            run_case(&a.case, &cfg, a.dump_costs.as_deref(), verbose, &mut report, "")?;
        }
        Some(list) => {
            if a.dump_costs.is_some() {
                return Err(Error::Input("--dump-costs is not supported with --batch".into()));
            }
            let cases = read_batch(list)?;
            let mut metrics = Vec::with_capacity(cases.len());
            for (n, case) in cases.iter().enumerate() {
                let prefix = format!("case.{}.", n + 1);
                if verbose {
                    eprintln!("case {}/{}", n + 1, cases.len());
                }
                metrics.push(run_case(case, &cfg, None, verbose, &mut report, &prefix)?);
            }
            report.add_cohort(&deformreg_core::cohort_stats(&metrics)?);
        }
    }
    match &a.report {
        Some(p) => report.write(p),
        None => {
            print!("{}", report.to_json());
            Ok(())
        }
    }
}

/// Parses a batch list: one case per line as whitespace-separated
/// `key=value` pairs (`fixed`, `moving`, `fixed_seg`, `moving_seg`,
/// `landmarks_fixed`, `landmarks_moving`, `out`, `warped`). Relative paths
/// are taken from the list's directory; `#` starts a comment.
pub fn read_batch(path: &Path) -> Result<Vec<CaseArgs>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let dir = path.parent().unwrap_or(Path::new(""));
    let mut cases = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut case = CaseArgs::default();
        for item in line.split_whitespace() {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::format(path, format!("line {}: expected key=value, got {item:?}", n + 1)))?;
            let slot = match k {
                "fixed" => &mut case.fixed,
                "moving" => &mut case.moving,
                "fixed_seg" => &mut case.fixed_seg,
                "moving_seg" => &mut case.moving_seg,
                "landmarks_fixed" => &mut case.landmarks_fixed,
                "landmarks_moving" => &mut case.landmarks_moving,
                "out" => &mut case.out,
                "warped" => &mut case.warped,
                _ => return Err(Error::format(path, format!("line {}: unknown key {k:?}", n + 1))),
            };
            *slot = Some(dir.join(v));
        }
        if case.fixed.is_none() || case.moving.is_none() {
            return Err(Error::format(path, format!("line {}: fixed= and moving= are required", n + 1)));
        }
        cases.push(case);
    }
    if cases.is_empty() {
        return Err(Error::format(path, "no cases listed"));
    }
    Ok(cases)
}

fn warp(a: WarpArgs) -> Result<()> {
    let image = io::read_image(&a.moving)?;
    let template = match &a.fixed {
        Some(p) => io::read_image(p)?,
        None => image.clone(),
    };
    let field = pipeline::full_resolution(io::load_field(&a.field)?, template.dims)?;
    let interp: Interp = a.interp.into();
    let header = template.header.as_ref();
    let integral = !matches!(image.samples, io::Samples::F32(_));
    if interp == Interp::Nearest && integral {
        let labels = io::load_labels(&a.moving)?;
        io::save_labels(&a.out, &warp_labels(&labels, &field, interp)?, header)
    } else {
        let vol = io::load_volume(&a.moving)?;
        io::save_volume(&a.out, &warp_volume(&vol, &field, interp)?, header)
    }
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let labels = match pair(&a.fixed_seg, &a.moving_seg, "--fixed-seg/--moving-seg")? {
        Some((f, m)) => Some((io::load_labels(f)?, io::load_labels(m)?)),
        None => None,
    };
    let (dims, spacing) = match (&labels, &a.fixed) {
        (_, Some(p)) => {
            let v = io::load_volume(p)?;
            (v.dims(), v.spacing())
        }
        (Some((f, _)), None) => (f.dims(), f.spacing()),
        (None, None) => {
            let image = io::read_image(&a.field)?;
            if image.stride != 1 {
                return Err(Error::Input("a control-grid field needs --fixed or --fixed-seg for the image size".into()));
            }
            let [x, y, z] = image.spacing;
            (image.dims, deformreg_core::Spacing::new(x, y, z)?)
        }
    };
    let field = pipeline::full_resolution(io::load_field(&a.field)?, dims)?;
    let landmarks = match pair(&a.landmarks_fixed, &a.landmarks_moving, "landmarks")? {
        Some((f, m)) => Some((io::load_landmarks(f, Some(dims))?, io::load_landmarks(m, None)?)),
        None => None,
    };
    let metrics = pipeline::evaluate_case(
        &field,
        labels.as_ref().map(|(a, b)| (a, b)),
        landmarks.as_ref().map(|(a, b)| (a, b)),
        spacing,
    )?;
    let report = Report::from_metrics(&metrics);
    match &a.report {
        Some(p) => report.write(p),
        None => {
            print!("{}", report.to_json());
            Ok(())
        }
    }
}

fn features(a: FeaturesArgs) -> Result<()> {
    let cfg = a.settings.resolve()?;
    match cfg.features {
        FeatureMode::Mind => {
            let vol = io::load_volume(required(&a.fixed, "fixed")?)?;
            io::save_features(&a.out, &mind_ssc(&vol, &cfg.mind)?)
        }
        FeatureMode::Segmentation => {
            let f = io::load_labels(required(&a.fixed_seg, "fixed-seg")?)?;
            let m = io::load_labels(required(&a.moving_seg, "moving-seg")?)?;
            let k = f.num_classes().max(m.num_classes());
            let (f, m) = (f.with_num_classes(k)?, m.with_num_classes(k)?);
            let (ff, fm) = seg_onehot_features(&f, &m)?;
            io::save_features(&a.out, &ff)?;
            if let Some(p) = &a.out_moving {
                io::save_features(p, &fm)?;
            }
            Ok(())
        }
    }
}
