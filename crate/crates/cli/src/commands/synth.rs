//! Writes a complete synthetic capture set:
//!
//! ```text
//! scene.toml
//! truth/{premult,alpha,color_matte,element}/frame.%04d.exr
//! mg/ gm/ lit/ sil/ bgg/ bgb/          one sequence per condition
//! chart/{red,green,blue}.exr, chart/region.txt
//! plates/<condition>.exr               empty-stage plates
//! plates/bounce/<condition>/           per-frame bounce plates (mg, gm)
//! multiplexed/                         48 fps alternating mg/gm capture
//! multiplexed/bounce/                  its per-frame bounce plates
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mgs_core::image::io::EncodeOptions;
use mgs_core::image::LinearImage;
use mgs_core::multiplex::{Condition, LightingSchedule};
use mgs_core::synth::{
    chart_region, multiplexed_time, render_bounce_plate, render_capture, render_chart,
    render_multiplexed, render_plate, render_truth, Layer, Shape, StageScene,
};
use rayon::prelude::*;

use crate::config::require_file;
use crate::error::{CliError, CliResult};
use crate::files::{create_dir, frames_in, save_elements, save_frames, schedule_extra, write_text};
use crate::{Ctx, SynthArgs};

/// Shutter of the multiplexed capture: 105 degrees.
pub const MULTIPLEXED_SHUTTER: f64 = 105.0 / 360.0;

/// Captured sequences, one directory each.
pub const CAPTURED: [Condition; 6] = [
    Condition::MagentaGreen,
    Condition::GreenMagenta,
    Condition::WhiteLitBlack,
    Condition::SilhouetteWhite,
    Condition::BackgroundGreen,
    Condition::BackgroundBlue,
];

/// A small stage: an opaque disk, a translucent tinted pane and a strand of
/// hair, all moving, with bounce light and camera crosstalk.
pub fn default_scene() -> StageScene {
    let mut scene = StageScene::new(96, 64);
    scene.frames = 6;
    scene.bounce_fraction = 0.05;
    scene.crosstalk = [[0.90, 0.10, 0.05], [0.08, 0.85, 0.10], [0.02, 0.10, 0.90]];
    scene
        .with_layer(
            Layer::new(
                Shape::Disk { radius: 14.0 },
                [34.0, 32.0],
                [0.85, 0.55, 0.40],
            )
            .moving([1.5, 0.0]),
        )
        .with_layer(
            Layer::new(
                Shape::Rect {
                    width: 22.0,
                    height: 30.0,
                },
                [66.0, 30.0],
                [0.30, 0.10, 0.05],
            )
            .moving([-1.0, 0.5])
            .with_transmission([0.1, 0.7, 0.7]),
        )
        .with_layer(
            Layer::new(
                Shape::Strand {
                    length: 40.0,
                    thickness: 1.2,
                    angle_degrees: 60.0,
                },
                [48.0, 26.0],
                [0.35, 0.25, 0.15],
            )
            .moving([0.5, 1.0])
            .with_opacity(0.8),
        )
}

fn save_single(ctx: &mut Ctx, img: &LinearImage, path: PathBuf) -> CliResult<()> {
    mgs_core::image::io::write_image(img, &path, &EncodeOptions::linear())?;
    ctx.rec.output(path);
    Ok(())
}

fn save_seq(
    ctx: &mut Ctx,
    frames: Vec<LinearImage>,
    rate: f64,
    label: &str,
    dir: &Path,
    extra: &BTreeMap<String, String>,
) -> CliResult<()> {
    let indices: Vec<usize> = (0..frames.len()).collect();
    save_frames(
        &mut ctx.rec,
        frames,
        &indices,
        rate,
        label,
        &frames_in(dir),
        &EncodeOptions::linear(),
        extra,
    )
}

pub fn synth(a: &SynthArgs, ctx: &mut Ctx) -> CliResult<PathBuf> {
    let mut scene = match &a.scene {
        Some(p) => {
            require_file("scene description", p)?;
            ctx.rec.input(p);
            StageScene::read(p)?
        }
        None => default_scene(),
    };
    if let Some(n) = a.frames {
        scene.frames = n;
    }
    if let Some(seed) = ctx.cfg.seed {
        scene.seed = seed;
    }
    scene.validate()?;
    let out = a.out_dir.clone();
    create_dir(&out)?;
    let text = scene.to_toml()?;
    write_text(&mut ctx.rec, out.join("scene.toml"), &text)?;
    let rate = scene.camera_rate;
    let none = BTreeMap::new();

    let truths = (0..scene.frames)
        .map(|i| render_truth(&scene, i))
        .collect::<mgs_core::Result<Vec<_>>>()?;
    let truth = out.join("truth");
    save_seq(
        ctx,
        truths.iter().map(|t| t.premultiplied.clone()).collect(),
        rate,
        "truth/premult",
        &truth.join("premult"),
        &none,
    )?;
    save_seq(
        ctx,
        truths.iter().map(|t| t.alpha.clone()).collect(),
        rate,
        "truth/alpha",
        &truth.join("alpha"),
        &none,
    )?;
    save_seq(
        ctx,
        truths
            .iter()
            .map(|t| t.color_matte.alpha_rgb().clone())
            .collect(),
        rate,
        "truth/color_matte",
        &truth.join("color_matte"),
        &none,
    )?;
    let elements: Vec<_> = truths.iter().map(|t| t.element()).collect();
    let indices: Vec<usize> = (0..scene.frames).collect();
    save_elements(
        &mut ctx.rec,
        &elements,
        &indices,
        rate,
        "truth/element",
        &frames_in(&truth.join("element")),
    )?;
    drop(truths);

    for cond in CAPTURED {
        let frames = (0..scene.frames)
            .into_par_iter()
            .map(|i| render_capture(&scene, cond, i))
            .collect::<mgs_core::Result<Vec<_>>>()?;
        let extra = BTreeMap::from([("condition".to_string(), cond.label().to_string())]);
        save_seq(
            ctx,
            frames,
            rate,
            cond.short(),
            &out.join(cond.short()),
            &extra,
        )?;
    }

    let chart = out.join("chart");
    for (led, name) in ["red", "green", "blue"].iter().enumerate() {
        save_single(
            ctx,
            &render_chart(&scene, led)?,
            chart.join(format!("{name}.exr")),
        )?;
    }
    let r = chart_region(&scene);
    write_text(
        &mut ctx.rec,
        chart.join("region.txt"),
        &format!("{},{},{},{}\n", r.x, r.y, r.width, r.height),
    )?;

    let plates = out.join("plates");
    for cond in CAPTURED {
        save_single(
            ctx,
            &render_plate(&scene, cond)?,
            plates.join(format!("{}.exr", cond.short())),
        )?;
    }
    for cond in [Condition::MagentaGreen, Condition::GreenMagenta] {
        let frames = (0..scene.frames)
            .into_par_iter()
            .map(|i| render_bounce_plate(&scene, cond, i as f64))
            .collect::<mgs_core::Result<Vec<_>>>()?;
        let label = format!("bounce/{}", cond.short());
        save_seq(
            ctx,
            frames,
            rate,
            &label,
            &plates.join("bounce").join(cond.short()),
            &none,
        )?;
    }

    let schedule = LightingSchedule::tmmgs_48fps(MULTIPLEXED_SHUTTER)?;
    let muxed = render_multiplexed(&scene, &schedule).map_err(|e| {
        CliError::invalid(
            "scene",
            format!("cannot render the multiplexed capture: {e}"),
        )
    })?;
    let bounce = (0..muxed.len())
        .into_par_iter()
        .map(|i| {
            let t = multiplexed_time(&scene, &schedule, i);
            render_bounce_plate(&scene, schedule.captured_condition(i), t)
        })
        .collect::<mgs_core::Result<Vec<_>>>()?;
    let mux_dir = out.join("multiplexed");
    save_seq(
        ctx,
        muxed.into_frames(),
        schedule.camera_rate,
        "multiplexed",
        &mux_dir,
        &schedule_extra(&schedule),
    )?;
    save_seq(
        ctx,
        bounce,
        schedule.camera_rate,
        "multiplexed/bounce",
        &mux_dir.join("bounce"),
        &none,
    )?;

    ctx.rec.param("frames", scene.frames);
    ctx.rec
        .param("size", format!("{}x{}", scene.width, scene.height));
    ctx.rec.param("scene_seed", scene.seed);
    Ok(out)
}
