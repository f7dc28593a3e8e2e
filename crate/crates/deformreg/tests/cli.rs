use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use deformreg::io;
use deformreg::report::Report;
use deformreg_core::{box_filter, Dims, DisplacementField, LabelVolume, LandmarkSet, Spacing, Volume3D};
use rand::{RngExt, SeedableRng};

const FAST: &str = "capture_mm = [4, 4, 4]\nstride = 4\nquantisation = 1\n[instance]\niterations = 40\n";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_deformreg"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn fails_with(o: &Output, code: i32, category: &str) {
    let err = stderr(o);
    assert_eq!(o.status.code(), Some(code), "{err}");
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with(&format!("error[{category}]: ")), "{err}");
}

/// 16^3 smoothed noise and a copy shifted by +2 voxels along x.
fn pair(dir: &Path) -> (Volume3D, Volume3D) {
    let dims = Dims::cube(16);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let noise = Volume3D::from_fn(dims, Spacing::UNIT, |_, _, _| rng.random_range(0.0..100.0f32)).unwrap();
    let fixed = box_filter(&noise, [1, 1, 1]);
    let moving = Volume3D::from_fn(dims, Spacing::UNIT, |x, y, z| fixed.at(x.saturating_sub(2), y, z)).unwrap();
    io::save_volume(&dir.join("fixed.nii.gz"), &fixed, None).unwrap();
    io::save_volume(&dir.join("moving.nii.gz"), &moving, None).unwrap();
    std::fs::write(dir.join("fast.toml"), FAST).unwrap();
    (fixed, moving)
}

fn cube_labels(dims: Dims, lo: usize) -> LabelVolume {
    let inside = |v: usize| (lo..lo + 6).contains(&v);
    let data = (0..dims.len())
        .map(|i| {
            let [x, y, z] = dims.coords(i);
            (inside(x) && inside(y) && inside(z)) as u32
        })
        .collect();
    LabelVolume::from_labels(dims, Spacing::UNIT, data).unwrap()
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    fails_with(&run(dir.path(), &[]), 2, "usage");
    fails_with(&run(dir.path(), &["register", "--bogus"]), 2, "usage");
    fails_with(&run(dir.path(), &["register", "--batch", "l.txt", "--fixed", "a.nii"]), 2, "usage");
    let help = run(dir.path(), &["--help"]);
    assert!(help.status.success());
    for cmd in ["register", "warp", "evaluate", "features", "presets"] {
        assert!(String::from_utf8_lossy(&help.stdout).contains(cmd));
    }
}

#[test]
fn presets_listing() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["presets"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    for name in ["task1", "task2", "task3"] {
        assert!(text.lines().any(|l| l.starts_with(name) && l.contains("4913")), "{text}");
    }
    let o = run(dir.path(), &["presets", "task3"]);
    let cfg: toml::Table = toml::from_str(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(cfg["features"].as_str(), Some("segmentation"));
    fails_with(&run(dir.path(), &["presets", "task7"]), 5, "config");
}

#[test]
fn error_categories() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    pair(d);
    fails_with(&run(d, &["register", "--fixed", "none.nii", "--moving", "moving.nii.gz"]), 3, "io");

    std::fs::write(d.join("junk.nii"), vec![7u8; 400]).unwrap();
    let o = run(d, &["register", "--fixed", "junk.nii", "--moving", "moving.nii.gz"]);
    fails_with(&o, 4, "format");
    assert!(stderr(&o).contains("unrecognised format"));

    std::fs::write(d.join("bad.toml"), "stirde = 3\n").unwrap();
    let o = run(d, &["register", "--fixed", "fixed.nii.gz", "--moving", "moving.nii.gz", "--config", "bad.toml"]);
    fails_with(&o, 5, "config");
    assert!(stderr(&o).contains("stirde"));

    io::save_volume(&d.join("small.nii"), &Volume3D::zeros(Dims::cube(8), Spacing::UNIT), None).unwrap();
    let o = run(d, &["register", "--fixed", "fixed.nii.gz", "--moving", "small.nii", "--config", "fast.toml"]);
    fails_with(&o, 6, "shape");

    fails_with(&run(d, &["register", "--fixed", "fixed.nii.gz", "--config", "fast.toml"]), 7, "input");
    let o = run(d, &["register", "--fixed", "fixed.nii.gz", "--moving", "moving.nii.gz", "--preset", "task3"]);
    fails_with(&o, 7, "input");
    fails_with(&run(d, &["presets", "--threads", "0"]), 5, "config");
}

#[test]
fn register_warp_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (fixed, _) = pair(d);
    let dims = fixed.dims();
    io::save_landmarks(&d.join("lf.csv"), &LandmarkSet::new(vec![[6.0, 7.0, 8.0], [9.0, 8.0, 7.0]])).unwrap();
    io::save_landmarks(&d.join("lm.csv"), &LandmarkSet::new(vec![[8.0, 7.0, 8.0], [11.0, 8.0, 7.0]])).unwrap();
    let o = run(
        d,
        &[
            "register", "--fixed", "fixed.nii.gz", "--moving", "moving.nii.gz", "--config", "fast.toml",
            "--landmarks-fixed", "lf.csv", "--landmarks-moving", "lm.csv", "--out", "u.nii.gz", "--warped",
            "w.nii.gz", "--report", "r.json", "--verbose", "--threads", "1",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let r = Report::read(&d.join("r.json")).unwrap();
    for key in ["tre.mean", "tre.per_landmark", "sdlogj", "search.count", "stages", "timing.features", "timing.adam", "adam.loss"] {
        assert!(r.get(key).is_some(), "{key} missing from {:?}", r.entries.keys());
    }
    assert_eq!(r.get_f64("search.count"), Some(729.0));
    assert!(r.get_f64("tre.mean").unwrap() < 0.5, "{:?}", r.get("tre.per_landmark"));

    let field = io::load_field(&d.join("u.nii.gz")).unwrap();
    assert_eq!((field.dims(), field.stride()), (dims, 1));
    assert!(io::load_volume(&d.join("w.nii.gz")).unwrap().dims() == dims);

    // without --verbose, no timings; without --report, JSON on stdout
    let o = run(d, &["register", "--fixed", "fixed.nii.gz", "--moving", "moving.nii.gz", "--config", "fast.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = Report::from_json(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert!(r.entries.keys().all(|k| !k.starts_with("timing.")));
    assert!(r.get_f64("sdlogj").is_some());

    // warp a label cube by a constant field and score it
    let shift = DisplacementField::constant(dims, 1, [2.0, 0.0, 0.0]);
    io::save_field(&d.join("t.nii"), &shift, Spacing::UNIT, None).unwrap();
    io::save_labels(&d.join("fseg.nii"), &cube_labels(dims, 4), None).unwrap();
    io::save_labels(&d.join("mseg.nii"), &cube_labels(dims, 6), None).unwrap();
    let o = run(d, &["warp", "--moving", "mseg.nii", "--field", "t.nii", "--out", "wseg.nii", "--interp", "nearest"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let warped = io::load_labels(&d.join("wseg.nii")).unwrap();
    let expected: Vec<u32> = (0..dims.len())
        .map(|i| {
            let [x, y, z] = dims.coords(i);
            let inside = |v: usize, lo: usize| (lo..lo + 6).contains(&v);
            (inside(x, 4) && inside(y, 6) && inside(z, 6)) as u32
        })
        .collect();
    assert_eq!(warped.data(), &expected[..]);

    let o = run(d, &["evaluate", "--field", "t.nii", "--fixed-seg", "fseg.nii", "--moving-seg", "mseg.nii"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = Report::from_json(&String::from_utf8(o.stdout).unwrap()).unwrap();
    let dice = r.get_f64("dice.per_class.1").unwrap();
    // overlap 6 x 4 x 4 of two 216-voxel cubes
    assert!((dice - 2.0 * 96.0 / 432.0).abs() < 1e-12, "{dice}");
    assert_eq!(r.get_f64("dice.mean"), Some(dice));
    assert!(r.get_f64("hd95.mean").is_some() && r.get_f64("sdlogj") == Some(0.0));

    let o = run(d, &["evaluate", "--field", "t.nii", "--landmarks-fixed", "lf.csv", "--landmarks-moving", "lm.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = Report::from_json(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(r.get_f64("tre.mean"), Some(0.0));

    fails_with(&run(d, &["evaluate", "--field", "t.nii"]), 7, "input");
}

#[test]
fn control_grid_fields_need_a_fixed_image() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    pair(d);
    let coarse = DisplacementField::constant(Dims::cube(4), 4, [1.0, 0.0, 0.0]);
    io::save_field(&d.join("c.json"), &coarse, Spacing::UNIT, None).unwrap();
    let o = run(d, &["warp", "--moving", "moving.nii.gz", "--field", "c.json", "--fixed", "fixed.nii.gz", "--out", "w.nii"]);
    assert!(o.status.success(), "{}", stderr(&o));
    fails_with(&run(d, &["warp", "--moving", "small.nii", "--field", "c.json", "--out", "w.nii"]), 3, "io");
    io::save_volume(&d.join("small.nii"), &Volume3D::zeros(Dims::cube(8), Spacing::UNIT), None).unwrap();
    fails_with(&run(d, &["warp", "--moving", "small.nii", "--field", "c.json", "--out", "w.nii"]), 6, "shape");
}

#[test]
fn features_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    pair(d);
    let o = run(d, &["features", "--fixed", "fixed.nii.gz", "--out", "mind.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let f = io::load_features(&d.join("mind.json")).unwrap();
    assert_eq!((f.dims(), f.channels()), (Dims::cube(16), 12));
    assert!(f.data().iter().all(|&v| v > 0.0 && v <= 1.0));

    let dims = Dims::cube(16);
    io::save_labels(&d.join("a.nii"), &cube_labels(dims, 2), None).unwrap();
    let two = LabelVolume::from_labels(dims, Spacing::UNIT, (0..dims.len()).map(|i| (i % 3) as u32).collect()).unwrap();
    io::save_labels(&d.join("b.nii"), &two, None).unwrap();
    let o = run(
        d,
        &["features", "--preset", "task3", "--fixed-seg", "a.nii", "--moving-seg", "b.nii", "--out", "fa.nii", "--out-moving", "fb.nii"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(io::load_features(&d.join("fa.nii")).unwrap().channels(), 3);
    assert_eq!(io::load_features(&d.join("fb.nii")).unwrap().channels(), 3);
}

#[test]
fn batch_mode() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    pair(d);
    let cases = d.join("cases");
    std::fs::create_dir(&cases).unwrap();
    let dims = Dims::cube(16);
    io::save_labels(&d.join("fseg.nii"), &cube_labels(dims, 4), None).unwrap();
    io::save_labels(&d.join("mseg.nii"), &cube_labels(dims, 6), None).unwrap();
    std::fs::write(
        cases.join("list.txt"),
        "# two cases\n\
         fixed=../fixed.nii.gz moving=../moving.nii.gz fixed_seg=../fseg.nii moving_seg=../mseg.nii out=u1.nii\n\
         \n\
         fixed=../moving.nii.gz moving=../fixed.nii.gz fixed_seg=../mseg.nii moving_seg=../fseg.nii\n",
    )
    .unwrap();
    let list: PathBuf = cases.join("list.txt");
    let o = run(d, &["register", "--batch", list.to_str().unwrap(), "--config", "fast.toml", "--report", "b.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = Report::read(&d.join("b.json")).unwrap();
    assert_eq!(r.get_f64("cohort.cases"), Some(2.0));
    for key in ["case.1.dice.mean", "case.2.dice.mean", "case.1.hd95.mean", "cohort.dice.mean", "cohort.dice30", "cohort.sdlogj.mean"] {
        assert!(r.get(key).is_some(), "{key} missing from {:?}", r.entries.keys());
    }
    assert!(cases.join("u1.nii").exists());

    std::fs::write(cases.join("bad.txt"), "fixed=a.nii mvoing=b.nii\n").unwrap();
    let o = run(d, &["register", "--batch", cases.join("bad.txt").to_str().unwrap()]);
    fails_with(&o, 4, "format");
    assert!(stderr(&o).contains("mvoing"));
}
