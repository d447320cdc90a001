#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mgs_core::calibration::CalibrationMatrix;
use mgs_core::image::io::{load_sequence_with_meta, read_image, SequenceMeta};
use mgs_core::image::{FrameSequence, LinearImage, Transfer};

/// Small opaque scene: two layers, bounce, crosstalk, no noise.
pub const SCENE: &str = r#"
width = 48
height = 32
frames = 3
bounce_fraction = 0.05
crosstalk = [[0.9, 0.1, 0.05], [0.08, 0.85, 0.1], [0.02, 0.1, 0.9]]

[[layers]]
shape = "disk"
radius = 7
position = [18, 16]
velocity = [1.5, 0]
reflectance = [0.8, 0.45, 0.3]

[[layers]]
shape = "strand"
length = 20
thickness = 1.5
angle_degrees = 70
position = [32, 14]
reflectance = [0.4, 0.3, 0.2]
opacity = 0.7
"#;

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn mgs(dir: &Path, args: &[&str]) -> Run {
    let Output {
        status,
        stdout,
        stderr,
    } = Command::new(env!("CARGO_BIN_EXE_mgs"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn mgs");
    Run {
        code: status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&stdout).into_owned(),
        stderr: String::from_utf8_lossy(&stderr).into_owned(),
    }
}

/// Runs and insists on success.
pub fn ok(dir: &Path, args: &[&str]) -> Run {
    let r = mgs(dir, args);
    assert_eq!(r.code, 0, "mgs {args:?} failed:\n{}", r.stderr);
    r
}

pub fn synth_scene(dir: &Path, text: &str, out: &str) {
    std::fs::write(dir.join("scene.toml"), text).unwrap();
    ok(dir, &["synth", "--scene", "scene.toml", "--out-dir", out]);
}

/// Synthesises [`SCENE`] into `s/` and calibrates it into `cal.txt`.
pub fn synth_and_calibrate(dir: &Path) {
    synth_scene(dir, SCENE, "s");
    let region = std::fs::read_to_string(dir.join("s/chart/region.txt")).unwrap();
    ok(
        dir,
        &[
            "calibrate",
            "--red",
            "s/chart/red.exr",
            "--green",
            "s/chart/green.exr",
            "--blue",
            "s/chart/blue.exr",
            "--region",
            region.trim(),
            "--out",
            "cal.txt",
        ],
    );
}

pub fn seq(dir: &Path, pattern: &str) -> (FrameSequence, SequenceMeta) {
    load_sequence_with_meta(dir.join(pattern).to_str().unwrap()).unwrap()
}

pub fn still(dir: &Path, path: &str) -> LinearImage {
    read_image(dir.join(path), Transfer::Linear).unwrap()
}

pub fn calibration(dir: &Path) -> CalibrationMatrix {
    CalibrationMatrix::read(dir.join("cal.txt")).unwrap()
}

pub fn max_diff(a: &LinearImage, b: &LinearImage) -> f64 {
    a.max_abs_diff(b).unwrap()
}

pub fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}
