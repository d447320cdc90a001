//! Acceptance gate: one line per criterion, non-zero exit on any failure.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::*;
use mgs_core::calibration::CalibrationMatrix;
use mgs_core::flow::{estimate_flow, FlowConfig, FlowField};
use mgs_core::image::LinearImage;
use mgs_core::matting::{
    naive_colorize, solve_matte, CleanPlate, ColorizationState, ForegroundElement, MatteChannel,
    MatteOptions,
};
use mgs_core::multiplex::{
    align_by_red, demux, reconstruct_tmmgs, simulate_motion_blur, triangulation_matte, Condition,
    LightingSchedule,
};
use mgs_core::synth::{
    multiplexed_time, random_scene, render_capture, render_capture_at, render_multiplexed,
    render_plate, render_truth, render_truth_at, Layer, Shape, StageScene,
};

struct Gate {
    failures: usize,
}

impl Gate {
    fn check(&mut self, name: &str, ok: bool, detail: String) {
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failures += 1;
        }
    }
}

fn key(
    scene: &StageScene,
    cal: &CalibrationMatrix,
    bounce: bool,
) -> (LinearImage, ForegroundElement) {
    let capture = calibrated(
        &render_capture(scene, Condition::MagentaGreen, 0).unwrap(),
        cal,
    );
    let mut plate = plate(scene, cal, Condition::MagentaGreen, 0.0);
    if !bounce {
        plate.bounce = None;
    }
    let (matte, elem) = solve_matte(
        &capture,
        &plate,
        MatteChannel::Green,
        &MatteOptions::default(),
    )
    .unwrap();
    (matte.into_alpha(), elem)
}

fn round_trip_keying(gate: &mut Gate) {
    let start = Instant::now();
    let (mut mae_worst, mut max_worst, mut rms_worst) = (0.0f64, 0.0f64, 0.0f64);
    let mut all_crosstalked = true;
    for seed in 0..20 {
        let scene = random_scene(seed, 128, 128);
        all_crosstalked &= scene.crosstalk != [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let cal = calibrate(&scene);
        let truth = render_truth(&scene, 0).unwrap();
        let (alpha, elem) = key(&scene, &cal, true);
        mae_worst = mae_worst.max(mean_abs_diff(&alpha, &truth.alpha));
        max_worst = max_worst.max(alpha.max_abs_diff(&truth.alpha).unwrap());
        rms_worst = rms_worst.max(elem.rgb().rms_diff(&truth.premultiplied).unwrap());
    }
    let secs = start.elapsed().as_secs_f64();
    gate.check(
        "round-trip keying on 20 random scenes",
        all_crosstalked && mae_worst < 1e-4 && max_worst < 1e-2 && rms_worst < 1e-4 && secs < 60.0,
        format!("worst alpha MAE {mae_worst:.2e}, worst alpha max {max_worst:.2e}, worst premultiplied RMS {rms_worst:.2e}, {secs:.2} s"),
    );
}

fn calibration(gate: &mut Gate) {
    let mut scene = StageScene::new(96, 96)
        .with_layer(Layer::new(
            Shape::Disk { radius: 20.0 },
            [40.0, 44.0],
            [0.8, 0.0, 0.3],
        ))
        .with_layer(
            Layer::new(Shape::Blob { sigma: 8.0 }, [66.0, 40.0], [0.3, 0.0, 0.9]).with_opacity(0.7),
        );
    scene.crosstalk = EXAMPLE_W;
    let cal = calibrate(&scene);
    let prod = cal.correction() * cal.measurement();
    let identity_err = (prod - nalgebra::Matrix3::identity()).abs().max();
    let w_err = (0..3)
        .flat_map(|r| (0..3).map(move |c| (r, c)))
        .map(|(r, c)| (cal.measurement()[(r, c)] - EXAMPLE_W[r][c]).abs())
        .fold(0.0, f64::max);
    let truth = render_truth(&scene, 0).unwrap();
    let (calibrated_alpha, _) = key(&scene, &cal, true);
    let (raw_alpha, _) = key(&scene, &CalibrationMatrix::identity(), true);
    let cal_err = mean_abs_diff(&calibrated_alpha, &truth.alpha);
    let raw_err = mean_abs_diff(&raw_alpha, &truth.alpha);
    gate.check(
        "calibration inverse",
        identity_err < 1e-9 && w_err < 1e-12,
        format!("max |M·W − I| {identity_err:.2e}, measured W error {w_err:.2e}"),
    );
    gate.check(
        "uncalibrated key is worse than calibrated by over 10x",
        raw_err > 10.0 * cal_err && raw_err > 0.0,
        format!("alpha MAE uncalibrated {raw_err:.2e} vs calibrated {cal_err:.2e}"),
    );
}

fn bounce(gate: &mut Gate) {
    let mut scene = StageScene::new(96, 96)
        .with_layer(Layer::new(
            Shape::Disk { radius: 30.0 },
            [48.0, 48.0],
            [0.9, 0.0, 0.8],
        ))
        .with_layer(Layer::new(
            Shape::Rect {
                width: 20.0,
                height: 12.0,
            },
            [30.0, 80.0],
            [0.6, 0.0, 0.5],
        ));
    scene.crosstalk = EXAMPLE_W;
    scene.bounce_fraction = 0.05;
    let cal = calibrate(&scene);
    let truth = render_truth(&scene, 0).unwrap();
    let background_level = |elem: &ForegroundElement| {
        elem.rgb()
            .pixels()
            .zip(truth.alpha.data())
            .filter(|(_, &a)| a == 0.0)
            .flat_map(|(px, _)| px.iter().map(|v| v.abs()))
            .fold(0.0, f64::max)
    };
    let with = background_level(&key(&scene, &cal, true).1);
    let without = background_level(&key(&scene, &cal, false).1);
    gate.check(
        "bounce subtraction at beta 0.05",
        with < 1e-4 && without > 1e-3,
        format!("max background residue {with:.2e} with subtraction, {without:.2e} without"),
    );
}

fn triangulation(gate: &mut Gate) {
    let mut scene = StageScene::new(96, 72)
        .with_layer(Layer::new(
            Shape::Disk { radius: 18.0 },
            [36.0, 36.0],
            [0.7, 0.6, 0.3],
        ))
        .with_layer(
            Layer::new(Shape::Blob { sigma: 6.0 }, [64.0, 30.0], [0.2, 0.9, 0.5]).with_opacity(0.8),
        )
        .with_layer(
            Layer::new(
                Shape::Strand {
                    length: 40.0,
                    thickness: 1.2,
                    angle_degrees: 60.0,
                },
                [60.0, 44.0],
                [0.5, 0.4, 0.6],
            )
            .with_opacity(0.6),
        );
    scene.crosstalk = EXAMPLE_W;
    let cal = calibrate(&scene);
    let cap = |c| calibrated(&render_capture(&scene, c, 0).unwrap(), &cal);
    let bg = |c| calibrated(&render_plate(&scene, c).unwrap(), &cal);
    let (f1, f2) = (
        cap(Condition::BackgroundGreen),
        cap(Condition::BackgroundBlue),
    );
    let (b1, b2) = (
        bg(Condition::BackgroundGreen),
        bg(Condition::BackgroundBlue),
    );
    let tri = triangulation_matte(&f1, &b1, &f2, &b2).unwrap();
    let truth = render_truth(&scene, 0).unwrap();
    let alpha_err = tri.matte.alpha().max_abs_diff(&truth.alpha).unwrap();
    let f_err = tri
        .element
        .rgb()
        .max_abs_diff(&truth.premultiplied)
        .unwrap();
    let (single, _) = solve_matte(
        &f1,
        &CleanPlate::new(b1),
        MatteChannel::Green,
        &MatteOptions::default(),
    )
    .unwrap();
    let single_err = single.alpha().max_abs_diff(&truth.alpha).unwrap();
    gate.check(
        "triangulation with green-reflecting layers",
        tri.valid.all() && alpha_err < 1e-6 && f_err < 1e-6 && single_err > 1e-2,
        format!("alpha max error {alpha_err:.2e}, premultiplied max error {f_err:.2e}, single-background alpha max error {single_err:.2e}"),
    );
}

fn time_multiplex(gate: &mut Gate) {
    let mut scene = StageScene::new(64, 48)
        .with_layer(
            Layer::new(Shape::Disk { radius: 9.0 }, [20.0, 24.0], [0.8, 0.5, 0.3])
                .moving([2.0, 0.5]),
        )
        .with_layer(
            Layer::new(Shape::Blob { sigma: 4.0 }, [44.0, 20.0], [0.3, 0.7, 0.6])
                .moving([-1.0, 1.0]),
        );
    scene.crosstalk = EXAMPLE_W;
    scene.bounce_fraction = 0.03;
    scene.camera_rate = 48.0;
    scene.frames = 8;
    let sched = LightingSchedule::tmmgs_48fps(105.0 / 360.0).unwrap();
    let seq = render_multiplexed(&scene, &sched).unwrap();
    let streams = demux(&seq, &sched).unwrap();
    let mut exact = streams.len() == 2;
    let mut compared = 0;
    for (cond, s) in &streams {
        for (f, &i) in s.frames().iter().zip(s.indices()) {
            let want =
                render_capture_at(&scene, *cond, multiplexed_time(&scene, &sched, i)).unwrap();
            exact &= f == &want;
            compared += 1;
        }
        for k in 0..s.len() {
            exact &= s.timestamp(k) == seq.timestamp(s.indices()[k]);
        }
    }
    gate.check(
        "demux of 48 fps magenta-green/green-magenta render is bit-exact",
        exact && compared == seq.len(),
        format!(
            "{compared} frames compared across {} streams",
            streams.len()
        ),
    );

    let at_limit = LightingSchedule::mg_24fps(1.0 / 6.0);
    let over_limit = LightingSchedule::mg_24fps(1.0 / 6.0 + 1e-6);
    let first_of_six = at_limit.as_ref().is_ok_and(|s| {
        s.changes_per_frame() == 6
            && (0..240).all(|i| {
                s.lighting_change(i) == 6 * i && s.captured_condition(i) == Condition::MagentaGreen
            })
    });
    gate.check(
        "24 fps camera on the 72 Hz pattern records the first of every six changes",
        first_of_six
            && over_limit.is_err()
            && at_limit
                .as_ref()
                .is_ok_and(|s| (s.shutter_fraction * 360.0 - 60.0).abs() < 1e-9),
        format!(
            "shutter 1/6 (60 degrees) accepted: {}, shutter above 1/6 rejected: {}",
            at_limit.is_ok(),
            over_limit.is_err()
        ),
    );
}

/// Period, direction, phase and amplitude of a broadband test texture.
const WAVES: [(f64, f64, f64, f64); 7] = [
    (97.0, 0.3, 0.9, 0.10),
    (61.0, 2.1, 0.2, 0.09),
    (43.0, 1.2, 2.5, 0.08),
    (29.0, 2.8, 1.7, 0.07),
    (19.0, 0.7, 0.4, 0.06),
    (13.0, 1.9, 3.0, 0.05),
    (9.0, 0.1, 1.3, 0.04),
];

fn texture(dx: f64, dy: f64) -> LinearImage {
    use std::f64::consts::TAU;
    LinearImage::from_fn(128, 128, 1, |x, y, _| {
        let (x, y) = (x as f64 - dx, y as f64 - dy);
        WAVES
            .iter()
            .map(|&(period, angle, phase, amp)| {
                amp * (TAU * (x * angle.cos() + y * angle.sin()) / period + phase).sin()
            })
            .sum::<f64>()
            + 0.5
    })
}

fn flow(gate: &mut Gate) {
    let cfg = FlowConfig::default();
    let base = texture(0.0, 0.0);
    let mut worst = 0.0f64;
    for s in 1..=8 {
        for (dx, dy) in [(s as f64, 0.0), (0.0, s as f64), (-(s as f64), s as f64)] {
            let f = estimate_flow(&base, &texture(dx, dy), &cfg).unwrap();
            let (u, v) = f.mean_flow(16);
            worst = worst.max((u - dx).abs()).max((v - dy).abs());
        }
    }
    let f = estimate_flow(&base, &texture(0.5, 0.0), &cfg).unwrap();
    let (u, v) = f.mean_flow(16);
    let sub = (u - 0.5).abs().max(v.abs());
    gate.check(
        "flow recovers integer shifts up to 8 px",
        worst < 0.5,
        format!("worst component error {worst:.3} px"),
    );
    gate.check(
        "flow recovers a 0.5 px shift",
        sub < 0.25,
        format!("error {sub:.3} px"),
    );

    let mut scene = StageScene::new(96, 64).with_layer(
        Layer::new(Shape::Blob { sigma: 6.0 }, [30.0, 32.0], [0.8, 0.6, 0.5]).moving([2.0, 0.0]),
    );
    scene.camera_rate = 48.0;
    scene.frames = 4;
    let sched = LightingSchedule::tmmgs_48fps(0.25).unwrap();
    let seq = render_multiplexed(&scene, &sched).unwrap();
    let streams = demux(&seq, &sched).unwrap();
    let mg = &streams[&Condition::MagentaGreen];
    let gm = &streams[&Condition::GreenMagenta];
    let plate = CleanPlate::new(render_plate(&scene, Condition::MagentaGreen).unwrap());
    let est = align_by_red(&mg.frames()[0], &mg.frames()[1], &cfg).unwrap();
    let opts = MatteOptions::default();
    let truth = render_truth_at(&scene, multiplexed_time(&scene, &sched, 0)).unwrap();
    let (tx, ty) = centroid(&truth.premultiplied, 1);
    let err = |flow: Option<&FlowField>| {
        let (_, elem) =
            reconstruct_tmmgs(&mg.frames()[0], &gm.frames()[0], &plate, None, flow, &opts).unwrap();
        let (gx, gy) = centroid(elem.rgb(), 1);
        (gx - tx).hypot(gy - ty)
    };
    let with = err(Some(&est));
    let without = err(None);
    gate.check(
        "tmmgs green registration with estimated flow at 2 px/frame",
        with < 0.5,
        format!("centroid error {with:.3} px (unaligned {without:.3} px)"),
    );
}

fn motion_blur(gate: &mut Gate) {
    let img = LinearImage::from_fn(96, 32, 3, |x, y, c| {
        ((x * 7 + y * 13 + c * 5) % 17) as f64 / 16.0
    });
    let flow = FlowField::uniform(96, 32, 10.0, 0.0);
    let blurred = simulate_motion_blur(&img, &flow, 0.5).unwrap();
    let oracle = LinearImage::from_fn(96, 32, 3, |x, y, c| {
        (-2isize..=2)
            .map(|d| img.get((x as isize + d).clamp(0, 95) as usize, y, c))
            .sum::<f64>()
            / 5.0
    });
    let level =
        (oracle.data().iter().map(|v| v * v).sum::<f64>() / oracle.data().len() as f64).sqrt();
    let rel = blurred.rms_diff(&oracle).unwrap() / level;
    let identity = simulate_motion_blur(&img, &FlowField::zeros(96, 32), 1.0)
        .unwrap()
        .max_abs_diff(&img)
        .unwrap();
    gate.check(
        "motion blur matches box oracle, zero flow is identity",
        rel < 0.01 && identity == 0.0,
        format!("relative RMS {rel:.2e}, zero-flow max change {identity:.1e}"),
    );
}

fn naive(gate: &mut Gate) {
    let (w, h) = (16, 12);
    let alpha = LinearImage::from_fn(w, h, 1, |x, y, _| ((x + 3 * y) % 7) as f64 / 6.0);
    let rgb = LinearImage::from_fn(w, h, 3, |x, y, c| match c {
        1 => 0.0,
        _ => alpha.get(x, y, 0) * (0.1 + 0.05 * ((x * (c + 1) + y) % 9) as f64),
    });
    let elem = ForegroundElement::new(
        rgb.clone(),
        alpha,
        ColorizationState::MissingChannel,
        Some(MatteChannel::Green),
    )
    .unwrap();
    let mut worst = 0.0f64;
    for rho in [0.0, 0.5, 1.0] {
        let out = naive_colorize(&elem, rho).unwrap();
        for (o, i) in out.rgb().pixels().zip(rgb.pixels()) {
            worst = worst.max((o[1] - (rho * i[0] + (1.0 - rho) * i[2])).abs());
            worst = worst.max((o[0] - i[0]).abs()).max((o[2] - i[2]).abs());
        }
    }
    gate.check(
        "naive colorization arithmetic at rho 0, 0.5, 1",
        worst < 1e-9,
        format!("max error {worst:.1e}"),
    );
}

fn main() -> ExitCode {
    let mut gate = Gate { failures: 0 };
    round_trip_keying(&mut gate);
    calibration(&mut gate);
    bounce(&mut gate);
    triangulation(&mut gate);
    time_multiplex(&mut gate);
    flow(&mut gate);
    motion_blur(&mut gate);
    naive(&mut gate);
    if gate.failures == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} criteria failed", gate.failures);
        ExitCode::FAILURE
    }
}
