use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::scene::StageScene;
use crate::calibration::ChartRegion;
use crate::compositing::ColorMatte;
use crate::error::{Error, Result};
use crate::image::{FrameSequence, LinearImage};
use crate::matting::{ColorizationState, ForegroundElement};
use crate::multiplex::{Condition, LightingSchedule};

/// Subsamples per pixel along each axis.
pub const SUPERSAMPLE: usize = 4;

/// Ground truth for one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct Truth {
    /// Unlit reflectance times coverage, per channel.
    pub premultiplied: LinearImage,
    /// Reflectance where covered, zero elsewhere.
    pub rgb: LinearImage,
    /// Mean of the per-channel alphas.
    pub alpha: LinearImage,
    pub color_matte: ColorMatte,
}

impl Truth {
    /// The white-lit element a full-colour key should reproduce.
    pub fn element(&self) -> ForegroundElement {
        ForegroundElement::new(
            self.premultiplied.clone(),
            self.alpha.clone(),
            ColorizationState::Reference,
            None,
        )
        .expect("truth shapes agree")
    }
}

fn check_frame(scene: &StageScene, frame: usize) -> Result<()> {
    if frame >= scene.frames {
        return Err(Error::Parameter(format!(
            "frame {frame} out of range for a {}-frame scene",
            scene.frames
        )));
    }
    Ok(())
}

pub fn render_truth(scene: &StageScene, frame: usize) -> Result<Truth> {
    check_frame(scene, frame)?;
    render_truth_at(scene, frame as f64)
}

/// Ground truth at time `t`, in scene frames.
pub fn render_truth_at(scene: &StageScene, t: f64) -> Result<Truth> {
    scene.validate()?;
    let (w, h) = (scene.width, scene.height);
    let n = SUPERSAMPLE;
    let weight = 1.0 / (n * n) as f64;
    let samples: Vec<[f64; 6]> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (px, py) = ((i % w) as f64, (i / w) as f64);
            let mut acc = [0.0; 6];
            for sy in 0..n {
                let y = py + (sy as f64 + 0.5) / n as f64 - 0.5;
                for sx in 0..n {
                    let x = px + (sx as f64 + 0.5) / n as f64 - 0.5;
                    let mut p = [0.0; 3];
                    let mut a = [0.0; 3];
                    for layer in &scene.layers {
                        let la = layer.alpha_at(x, y, t);
                        for c in 0..3 {
                            p[c] = la[c] * layer.reflectance[c] + (1.0 - la[c]) * p[c];
                            a[c] = la[c] + (1.0 - la[c]) * a[c];
                        }
                    }
                    for c in 0..3 {
                        acc[c] += p[c] * weight;
                        acc[3 + c] += a[c] * weight;
                    }
                }
            }
            acc
        })
        .collect();

    let mut premultiplied = LinearImage::zeros(w, h, 3);
    let mut rgb = LinearImage::zeros(w, h, 3);
    let mut alpha_rgb = LinearImage::zeros(w, h, 3);
    let mut alpha = LinearImage::zeros(w, h, 1);
    for (i, s) in samples.iter().enumerate() {
        let (x, y) = (i % w, i / w);
        for c in 0..3 {
            premultiplied.set(x, y, c, s[c]);
            alpha_rgb.set(x, y, c, s[3 + c]);
            if s[3 + c] > 1e-12 {
                rgb.set(x, y, c, s[c] / s[3 + c]);
            }
        }
        alpha.set(x, y, 0, (s[3] + s[4] + s[5]) / 3.0);
    }
    Ok(Truth {
        premultiplied,
        rgb,
        alpha,
        color_matte: ColorMatte::new(alpha_rgb)?,
    })
}

fn screen_profile(scene: &StageScene, x: usize, y: usize) -> f64 {
    if scene.screen_falloff == 0.0 {
        return 1.0;
    }
    let cx = 0.5 * (scene.width as f64 - 1.0);
    let cy = 0.5 * (scene.height as f64 - 1.0);
    let r2 = (cx * cx + cy * cy).max(1e-12);
    let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
    1.0 - scene.screen_falloff * d2 / r2
}

fn apply_crosstalk(scene: &StageScene, lin: [f64; 3]) -> [f64; 3] {
    let w = &scene.crosstalk;
    [
        w[0][0] * lin[0] + w[0][1] * lin[1] + w[0][2] * lin[2],
        w[1][0] * lin[0] + w[1][1] * lin[1] + w[1][2] * lin[2],
        w[2][0] * lin[0] + w[2][1] * lin[1] + w[2][2] * lin[2],
    ]
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn add_noise(scene: &StageScene, img: &mut LinearImage, key: u64) {
    if scene.noise_sigma == 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix(scene.seed ^ mix(key)));
    let normal = Normal::new(0.0, scene.noise_sigma).expect("sigma validated");
    for v in img.data_mut() {
        *v += normal.sample(&mut rng);
    }
}

fn condition_key(condition: Condition, t: f64) -> u64 {
    mix(condition as u64 + 1) ^ t.to_bits()
}

/// Uniform bounce light: `β` times the mean lit foreground flux.
fn bounce_light(scene: &StageScene, truth: &Truth, gain: [f64; 3]) -> [f64; 3] {
    let means = truth.premultiplied.channel_means();
    [0, 1, 2].map(|c| scene.bounce_fraction * gain[c] * means[c])
}

fn compose(scene: &StageScene, condition: Condition, truth: &Truth, t: f64) -> LinearImage {
    let light = scene.lighting(condition);
    let (w, h) = (scene.width, scene.height);
    let mut out = match condition {
        Condition::CleanPlate => plate_image(scene, light.emission, [0.0; 3]),
        Condition::BouncePlate => {
            plate_image(scene, [0.0; 3], bounce_light(scene, truth, light.gain))
        }
        _ => {
            let bounce = bounce_light(scene, truth, light.gain);
            let alpha = truth.color_matte.alpha_rgb();
            LinearImage::from_pixel_fn(w, h, 3, |x, y, px| {
                let p = truth.premultiplied.pixel(x, y);
                let a = alpha.pixel(x, y);
                let s = screen_profile(scene, x, y);
                let lin = [0, 1, 2].map(|c| {
                    light.gain[c] * p[c] + (1.0 - a[c]) * (light.emission[c] * s + bounce[c])
                });
                px.copy_from_slice(&apply_crosstalk(scene, lin));
            })
        }
    };
    add_noise(scene, &mut out, condition_key(condition, t));
    out
}

fn plate_image(scene: &StageScene, emission: [f64; 3], bounce: [f64; 3]) -> LinearImage {
    LinearImage::from_pixel_fn(scene.width, scene.height, 3, |x, y, px| {
        let s = screen_profile(scene, x, y);
        let lin = [0, 1, 2].map(|c| emission[c] * s + bounce[c]);
        px.copy_from_slice(&apply_crosstalk(scene, lin));
    })
}

/// What the camera records under `condition` at scene frame `frame`.
pub fn render_capture(
    scene: &StageScene,
    condition: Condition,
    frame: usize,
) -> Result<LinearImage> {
    check_frame(scene, frame)?;
    render_capture_at(scene, condition, frame as f64)
}

/// What the camera records under `condition` at time `t`, in scene frames.
pub fn render_capture_at(scene: &StageScene, condition: Condition, t: f64) -> Result<LinearImage> {
    let truth = render_truth_at(scene, t)?;
    Ok(compose(scene, condition, &truth, t))
}

/// The screen under `condition` with nothing in front of it.
pub fn render_plate(scene: &StageScene, condition: Condition) -> Result<LinearImage> {
    scene.validate()?;
    Ok(plate_image(
        scene,
        scene.lighting(condition).emission,
        [0.0; 3],
    ))
}

/// The bounce the subject casts on the screen under `condition` at time
/// `t`, seen with the screen itself dark.
pub fn render_bounce_plate(
    scene: &StageScene,
    condition: Condition,
    t: f64,
) -> Result<LinearImage> {
    let truth = render_truth_at(scene, t)?;
    let bounce = bounce_light(scene, &truth, scene.lighting(condition).gain);
    Ok(plate_image(scene, [0.0; 3], bounce))
}

/// A centred square for the white calibration reflector.
pub fn chart_region(scene: &StageScene) -> ChartRegion {
    let side = (scene.width.min(scene.height) / 4).max(4);
    let side_x = side.min(scene.width);
    let side_y = side.min(scene.height);
    ChartRegion {
        x: (scene.width - side_x) / 2,
        y: (scene.height - side_y) / 2,
        width: side_x,
        height: side_y,
    }
}

/// A white reflector lit by LED `led` (0 red, 1 green, 2 blue) alone.
pub fn render_chart(scene: &StageScene, led: usize) -> Result<LinearImage> {
    scene.validate()?;
    if led > 2 {
        return Err(Error::Parameter(format!(
            "LED index {led} must be 0, 1 or 2"
        )));
    }
    let region = chart_region(scene);
    let mut lin = [0.0; 3];
    lin[led] = 1.0;
    let response = apply_crosstalk(scene, lin);
    let mut out = LinearImage::from_pixel_fn(scene.width, scene.height, 3, |x, y, px| {
        let inside = x >= region.x
            && x < region.x + region.width
            && y >= region.y
            && y < region.y + region.height;
        if inside {
            px.copy_from_slice(&response);
        }
    });
    add_noise(scene, &mut out, mix(0xC4A7 + led as u64));
    Ok(out)
}

/// Renders the scene through a lighting schedule, each frame at the middle
/// of its exposure.
///
/// The schedule's camera may run at the scene rate or twice it; the output
/// covers the same span of scene time either way.
pub fn render_multiplexed(
    scene: &StageScene,
    schedule: &LightingSchedule,
) -> Result<FrameSequence> {
    schedule.validate()?;
    scene.validate()?;
    let speed = schedule.camera_rate / scene.camera_rate;
    let matches = |k: f64| (speed - k).abs() < 1e-9;
    if !(matches(1.0) || matches(2.0)) {
        return Err(Error::structural(format!(
            "schedule camera rate {} must equal or double the scene rate {}",
            schedule.camera_rate, scene.camera_rate
        )));
    }
    let count = scene.frames * speed.round() as usize;
    let frames: Result<Vec<LinearImage>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let t = (i as f64 + 0.5 * schedule.shutter_fraction) / speed;
            render_capture_at(scene, schedule.captured_condition(i), t)
        })
        .collect();
    FrameSequence::new(frames?, schedule.camera_rate, "multiplexed")
}

/// The scene time (in scene frames) at which frame `i` of a multiplexed
/// render is evaluated.
pub fn multiplexed_time(scene: &StageScene, schedule: &LightingSchedule, i: usize) -> f64 {
    let speed = schedule.camera_rate / scene.camera_rate;
    (i as f64 + 0.5 * schedule.shutter_fraction) / speed
}
