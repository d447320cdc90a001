#![allow(dead_code)]

use mgs_core::calibration::{
    apply_calibration, build_calibration, CalibrationMatrix, DEFAULT_MAX_CONDITION,
};
use mgs_core::image::LinearImage;
use mgs_core::matting::CleanPlate;
use mgs_core::multiplex::Condition;
use mgs_core::synth::{chart_region, render_bounce_plate, render_chart, render_plate, StageScene};

pub const EXAMPLE_W: [[f64; 3]; 3] = [[0.90, 0.10, 0.05], [0.08, 0.85, 0.10], [0.02, 0.10, 0.90]];

/// Calibration measured from the scene's own chart shots.
pub fn calibrate(scene: &StageScene) -> CalibrationMatrix {
    let shots: Vec<_> = (0..3)
        .map(|led| render_chart(scene, led).unwrap())
        .collect();
    build_calibration(
        &shots[0],
        &shots[1],
        &shots[2],
        &chart_region(scene),
        DEFAULT_MAX_CONDITION,
    )
    .unwrap()
}

pub fn calibrated(img: &LinearImage, cal: &CalibrationMatrix) -> LinearImage {
    apply_calibration(img, cal).unwrap()
}

/// Calibrated clean plate for `condition`, with the bounce plate at time `t`.
pub fn plate(
    scene: &StageScene,
    cal: &CalibrationMatrix,
    condition: Condition,
    t: f64,
) -> CleanPlate {
    CleanPlate::with_bounce(
        calibrated(&render_plate(scene, condition).unwrap(), cal),
        calibrated(&render_bounce_plate(scene, condition, t).unwrap(), cal),
    )
}

/// Intensity-weighted centroid of channel `c`.
pub fn centroid(img: &LinearImage, c: usize) -> (f64, f64) {
    let (mut sx, mut sy, mut s) = (0.0, 0.0, 0.0);
    for y in 0..img.height() {
        for x in 0..img.width() {
            let v = img.get(x, y, c);
            sx += v * x as f64;
            sy += v * y as f64;
            s += v;
        }
    }
    (sx / s, sy / s)
}

pub fn mean_abs_diff(a: &LinearImage, b: &LinearImage) -> f64 {
    let n = a.data().len() as f64;
    a.data()
        .iter()
        .zip(b.data())
        .map(|(p, q)| (p - q).abs())
        .sum::<f64>()
        / n
}

/// Channels `cs` of `a` and `b`, compared by RMS.
pub fn rms_channels(a: &LinearImage, b: &LinearImage, cs: &[usize]) -> f64 {
    let mut s = 0.0;
    let mut n = 0.0;
    for (pa, pb) in a.pixels().zip(b.pixels()) {
        for &c in cs {
            s += (pa[c] - pb[c]).powi(2);
            n += 1.0;
        }
    }
    (s / n).sqrt()
}
