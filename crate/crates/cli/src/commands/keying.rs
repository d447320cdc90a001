use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mgs_core::calibration::build_calibration;
use mgs_core::compositing::{over, over_color_matte};
use mgs_core::image::io::{write_exr_named, EncodeOptions, FramePattern};
use mgs_core::image::{tonemap, LinearImage, Transfer};
use mgs_core::matting::{
    naive_colorize, solve_matte, BackgroundMode, CleanPlate, ColorizationState, ForegroundElement,
    MatteChannel, MatteOptions,
};
use rayon::prelude::*;

use super::{out_dir, pattern_dir, pick};
use crate::error::{CliError, CliResult};
use crate::files::{
    frames_in, load_calibration, load_color_mattes, load_elements, load_frames, load_still,
    parse_region, save_elements, save_frames, PlateSource,
};
use crate::{CalibrateArgs, ColorizeNaiveArgs, CompositeArgs, Ctx, KeyArgs};

pub fn calibrate(a: &CalibrateArgs, ctx: &mut Ctx) -> CliResult<PathBuf> {
    let out = pick(
        &a.out,
        &ctx.cfg.paths.calibration,
        "calibration output",
        "--out",
    )?;
    let region = parse_region(&a.region)?;
    let max_condition = a.max_condition.unwrap_or(ctx.cfg.max_condition);
    let red = load_still(&mut ctx.rec, &ctx.cfg, "red chart shot", &a.red)?;
    let green = load_still(&mut ctx.rec, &ctx.cfg, "green chart shot", &a.green)?;
    let blue = load_still(&mut ctx.rec, &ctx.cfg, "blue chart shot", &a.blue)?;
    let cal = build_calibration(&red, &green, &blue, &region, max_condition)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    cal.write(&out)?;
    ctx.rec.output(&out);
    ctx.rec.param("region", &a.region);
    ctx.rec.param("max_condition", max_condition);
    ctx.rec.param("condition_number", cal.condition_number());
    Ok(crate::parent_dir(&out))
}

/// Names of the two measured channels for a matte channel, e.g. `R`, `B`.
pub(crate) fn lit_names(mc: MatteChannel) -> [String; 2] {
    mc.lit_channels().map(|c| {
        MatteChannel::from_index(c)
            .expect("channel index")
            .to_string()
    })
}

pub fn key(a: &KeyArgs, ctx: &mut Ctx) -> CliResult<PathBuf> {
    // Calibration first: nothing else is read without it.
    let cal_path = pick(
        &a.calibration,
        &ctx.cfg.paths.calibration,
        "calibration sidecar",
        "--calibration",
    )?;
    let cal = load_calibration(&mut ctx.rec, Some(&cal_path), true)?;
    let input = pick(&a.input, &ctx.cfg.paths.input, "input sequence", "--input")?;
    let plate_path = pick(&a.plate, &ctx.cfg.paths.plate, "clean plate", "--plate")?;
    let out = out_dir(&a.out_dir, ctx)?;
    let mc = a.matte_channel.unwrap_or(ctx.cfg.matte_channel);
    let opts = MatteOptions {
        eps_alpha: a.eps_alpha.unwrap_or(ctx.cfg.eps_alpha),
        background: if a.scalar_background {
            BackgroundMode::Scalar(None)
        } else {
            BackgroundMode::PerPixel
        },
        bounce_order: a.bounce_order.unwrap_or(ctx.cfg.bounce_order),
        keep_raw_alpha: false,
    };

    let plate = cal.apply(&load_still(
        &mut ctx.rec,
        &ctx.cfg,
        "clean plate",
        &plate_path,
    )?)?;
    let bounce_spec = a
        .bounce_plate
        .clone()
        .or_else(|| ctx.cfg.paths.bounce_plate.clone());
    let bounce = match &bounce_spec {
        Some(spec) => Some(
            PlateSource::load(&mut ctx.rec, &ctx.cfg, "bounce plate", spec)?
                .map(|img| Ok(cal.apply(img)?))?,
        ),
        None => None,
    };
    let (seq, _) = load_frames(&mut ctx.rec, &ctx.cfg, "input sequence", &input)?;

    let keyed: Vec<(LinearImage, ForegroundElement)> = seq
        .frames()
        .par_iter()
        .zip(seq.indices().par_iter())
        .map(|(frame, &i)| {
            let frame = cal.apply(frame)?;
            let plate = match &bounce {
                Some(b) => CleanPlate::with_bounce(plate.clone(), b.at(i, "bounce plate")?.clone()),
                None => CleanPlate::new(plate.clone()),
            };
            let (matte, elem) = solve_matte(&frame, &plate, mc, &opts)?;
            Ok((matte.into_alpha(), elem))
        })
        .collect::<CliResult<_>>()?;
    let (mattes, elements): (Vec<_>, Vec<_>) = keyed.into_iter().unzip();

    let label = seq.label().to_string();
    save_elements(
        &mut ctx.rec,
        &elements,
        seq.indices(),
        seq.frame_rate(),
        &label,
        &frames_in(&out.join("element")),
    )?;
    save_frames(
        &mut ctx.rec,
        mattes,
        seq.indices(),
        seq.frame_rate(),
        &format!("{label}/matte"),
        &frames_in(&out.join("matte")),
        &EncodeOptions::linear(),
        &BTreeMap::new(),
    )?;
    if let Some(dir) = &a.colorizer_input {
        write_colorizer_input(ctx, &elements, seq.indices(), mc, dir)?;
        ctx.rec.param("colorizer_input", dir.display());
    }
    ctx.rec.param("input", &input);
    ctx.rec.param("matte_channel", mc);
    ctx.rec.param("eps_alpha", opts.eps_alpha);
    ctx.rec.param("bounce_order", opts.bounce_order);
    ctx.rec.param("scalar_background", a.scalar_background);
    Ok(out)
}

/// Tonemapped measured channels of each element, the colorizer's inference
/// input.
fn write_colorizer_input(
    ctx: &mut Ctx,
    elements: &[ForegroundElement],
    indices: &[usize],
    mc: MatteChannel,
    dir: &Path,
) -> CliResult<()> {
    let pat = FramePattern::parse(&frames_in(dir))?;
    let names = lit_names(mc);
    let names = [names[0].as_str(), names[1].as_str()];
    let [c0, c1] = mc.lit_channels();
    for (elem, &i) in elements.iter().zip(indices) {
        let t = tonemap(elem.rgb(), ctx.cfg.tonemap_gamma)?;
        let pair = LinearImage::from_channels(&[&t.channel(c0), &t.channel(c1)])?;
        let path = pat.path(i);
        write_exr_named(&pair, &path, &names, Transfer::Linear)?;
        ctx.rec.output(path);
    }
    Ok(())
}

pub fn composite(a: &CompositeArgs, ctx: &mut Ctx) -> CliResult<PathBuf> {
    let transfer = ctx.cfg.output_transfer()?;
    let seq = load_elements(&mut ctx.rec, &ctx.cfg, &a.element)?;
    let background = PlateSource::load(&mut ctx.rec, &ctx.cfg, "background", &a.background)?;
    let mattes = match &a.color_matte {
        Some(p) => Some(load_color_mattes(&mut ctx.rec, &ctx.cfg, p)?),
        None => None,
    };
    if seq
        .elements
        .iter()
        .any(|e| e.state() == ColorizationState::MissingChannel)
    {
        eprintln!("warning: compositing an element whose matte channel is still missing");
    }
    let frames: Vec<LinearImage> = seq
        .elements
        .par_iter()
        .zip(seq.indices.par_iter())
        .map(|(elem, &i)| {
            let bg = background.at(i, "background")?;
            let out = match &mattes {
                None => over(elem, bg)?,
                Some(m) => {
                    let matte = m.get(&i).ok_or_else(|| {
                        CliError::invalid("colour matte", format!("no frame {i}"))
                    })?;
                    over_color_matte(elem.rgb(), matte, bg)?
                }
            };
            Ok(out)
        })
        .collect::<CliResult<_>>()?;
    save_frames(
        &mut ctx.rec,
        frames,
        &seq.indices,
        seq.frame_rate,
        "composite",
        &a.out,
        &EncodeOptions::with_transfer(transfer),
        &BTreeMap::new(),
    )?;
    ctx.rec.param("element", &a.element);
    ctx.rec.param("background", &a.background);
    ctx.rec
        .param("color_matte", a.color_matte.as_deref().unwrap_or("none"));
    ctx.rec.param("output_transfer", transfer);
    Ok(pattern_dir(&a.out))
}

pub fn colorize_naive(a: &ColorizeNaiveArgs, ctx: &mut Ctx) -> CliResult<PathBuf> {
    let out = out_dir(&a.out_dir, ctx)?;
    let rho = a.rho.unwrap_or(ctx.cfg.rho);
    let seq = load_elements(&mut ctx.rec, &ctx.cfg, &a.element)?;
    let colorized: Vec<ForegroundElement> = seq
        .elements
        .par_iter()
        .map(|e| Ok(naive_colorize(e, rho)?))
        .collect::<CliResult<_>>()?;
    save_elements(
        &mut ctx.rec,
        &colorized,
        &seq.indices,
        seq.frame_rate,
        &seq.label,
        &frames_in(&out.join("element")),
    )?;
    ctx.rec.param("element", &a.element);
    ctx.rec.param("rho", rho);
    Ok(out)
}
