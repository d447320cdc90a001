use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mgs_core::calibration::CalibrationMatrix;
use mgs_core::flow::{estimate_flow, warp, FlowConfig, FlowField};
use mgs_core::image::io::{EncodeOptions, FramePattern};
use mgs_core::image::{FrameSequence, LinearImage};
use mgs_core::matting::{CleanPlate, ForegroundElement, MatteOptions};
use mgs_core::multiplex::{
    align_by_red, classic_tmm, demux as split, reconstruct_tmmgs, triangulation_color_matte,
    triangulation_matte, LightingSchedule,
};
use rayon::prelude::*;

use super::{out_dir, pick};
use crate::error::{CliError, CliResult};
use crate::files::{
    flow_plane, frames_in, load_calibration, load_frames, load_still, parse_conditions,
    save_elements, save_frames, schedule_extra, schedule_from_meta, PlateSource,
};
use crate::{Ctx, DemuxArgs, TmmClassicArgs, TmmgsArgs, TriangulateArgs};

pub fn demux(a: &DemuxArgs, ctx: &mut Ctx) -> CliResult<PathBuf> {
    let input = pick(&a.input, &ctx.cfg.paths.input, "input sequence", "--input")?;
    let out = out_dir(&a.out_dir, ctx)?;
    let (seq, meta) = load_frames(&mut ctx.rec, &ctx.cfg, "input sequence", &input)?;
    let base = match schedule_from_meta(&meta)? {
        Some(s) => Some(s),
        None => ctx.cfg.schedule.clone(),
    };
    let conditions = match (&a.conditions, &base) {
        (Some(list), _) => parse_conditions(list)?,
        (None, Some(s)) => s.conditions.clone(),
        (None, None) => {
            return Err(CliError::unspecified(
                "lighting schedule",
                "--conditions or a schedule in the sidecar",
            ))
        }
    };
    let flash_rate = a
        .flash_rate
        .or(base.as_ref().map(|s| s.flash_rate))
        .unwrap_or(seq.frame_rate());
    let phase = a.phase.or(base.as_ref().map(|s| s.phase)).unwrap_or(0);
    let ratio = (flash_rate / seq.frame_rate()).round().max(1.0);
    let shutter = a
        .shutter
        .or(base.as_ref().map(|s| s.shutter_fraction))
        .unwrap_or(1.0 / ratio);
    let schedule = LightingSchedule::new(conditions, flash_rate, seq.frame_rate(), phase, shutter)?;

    let streams = split(&seq, &schedule)?;
    for (cond, stream) in &streams {
        let mut extra = schedule_extra(&schedule);
        extra.insert("condition".into(), cond.label().into());
        save_frames(
            &mut ctx.rec,
            stream.frames().to_vec(),
            stream.indices(),
            stream.frame_rate(),
            stream.label(),
            &frames_in(&out.join(cond.short())),
            &EncodeOptions::linear(),
            &extra,
        )?;
        ctx.rec
            .param(&format!("frames.{}", cond.short()), stream.len());
    }
    ctx.rec.param("input", &input);
    for (k, v) in schedule_extra(&schedule) {
        ctx.rec.param(&k, v);
    }
    Ok(out)
}

enum FlowMode {
    Off,
    Auto,
    Files(FramePattern),
}

fn flow_mode(s: &str) -> CliResult<FlowMode> {
    match s {
        "none" => Ok(FlowMode::Off),
        "auto" => Ok(FlowMode::Auto),
        pattern => {
            let pat = FramePattern::parse(pattern)?;
            if !pat.is_numbered() {
                return Err(CliError::invalid(
                    "flow",
                    format!("'{pattern}' is not auto, none, or a frame pattern"),
                ));
            }
            Ok(FlowMode::Files(pat))
        }
    }
}

type Estimator<'a> = dyn Fn(&LinearImage, &LinearImage) -> CliResult<FlowField> + Sync + 'a;

/// Flow for each anchor frame, scaled so that half of it reaches the
/// in-between frame at `between[k]`.
///
/// Raw flow runs from anchor `k` to anchor `k + 1`; the last anchor reuses
/// the flow of the one before it.
fn midpoint_flows(
    rec: &mut crate::manifest::Recorder,
    anchors: &[LinearImage],
    anchor_idx: &[usize],
    between: &[usize],
    mode: &FlowMode,
    estimate: &Estimator<'_>,
) -> CliResult<Vec<Option<FlowField>>> {
    let n = anchors.len();
    if matches!(mode, FlowMode::Off) {
        return Ok(vec![None; n]);
    }
    // (source anchor, spacing in frames) for each k
    let plan: Vec<Option<(usize, f64)>> = (0..n)
        .map(|k| {
            if n < 2 {
                return None;
            }
            let src = if k + 1 < n { k } else { k - 1 };
            Some((src, (anchor_idx[src + 1] - anchor_idx[src]) as f64))
        })
        .collect();
    let sources: Vec<usize> = {
        let mut s: Vec<usize> = plan.iter().flatten().map(|p| p.0).collect();
        s.dedup();
        s
    };
    let raw: BTreeMap<usize, FlowField> = match mode {
        FlowMode::Off => unreachable!(),
        FlowMode::Auto => sources
            .par_iter()
            .map(|&k| Ok((k, estimate(&anchors[k], &anchors[k + 1])?)))
            .collect::<CliResult<_>>()?,
        FlowMode::Files(pat) => sources
            .iter()
            .map(|&k| {
                let path = pat.path(anchor_idx[k]);
                if !path.is_file() {
                    return Err(CliError::missing("flow file", path));
                }
                rec.input(path.clone());
                Ok((k, FlowField::read(&path)?))
            })
            .collect::<CliResult<_>>()?,
    };
    Ok(plan
        .iter()
        .enumerate()
        .map(|(k, p)| {
            p.map(|(src, spacing)| {
                let offset = between[k] as f64 - anchor_idx[k] as f64;
                raw[&src].scaled(2.0 * offset / spacing)
            })
        })
        .collect())
}

fn calibrated(seq: &FrameSequence, cal: &CalibrationMatrix) -> CliResult<Vec<LinearImage>> {
    seq.frames().par_iter().map(|f| Ok(cal.apply(f)?)).collect()
}

fn optional_plate(
    ctx: &mut Ctx,
    what: &str,
    spec: Option<&str>,
    cal: &CalibrationMatrix,
) -> CliResult<Option<PlateSource>> {
    spec.map(|s| PlateSource::load(&mut ctx.rec, &ctx.cfg, what, s)?.map(|img| Ok(cal.apply(img)?)))
        .transpose()
}

fn paired_len(a: &FrameSequence, b: &FrameSequence, what: &str) -> CliResult<usize> {
    let n = a.len().min(b.len());
    if n == 0 {
        return Err(CliError::invalid(what, "no frame pairs"));
    }
    if a.len() != b.len() {
        eprintln!(
            "warning: {what}: {} and {} frames, using the first {n} pairs",
            a.len(),
            b.len()
        );
    }
    Ok(n)
}

#[allow(clippy::too_many_arguments)]
fn save_keyed(
    ctx: &mut Ctx,
    out: &Path,
    elements: &[ForegroundElement],
    mattes: Vec<LinearImage>,
    matte_dir: &str,
    indices: &[usize],
    rate: f64,
    label: &str,
) -> CliResult<()> {
    save_elements(
        &mut ctx.rec,
        elements,
        indices,
        rate,
        label,
        &frames_in(&out.join("element")),
    )?;
    save_frames(
        &mut ctx.rec,
        mattes,
        indices,
        rate,
        &format!("{label}/{matte_dir}"),
        &frames_in(&out.join(matte_dir)),
        &EncodeOptions::linear(),
        &BTreeMap::new(),
    )
}

pub fn tmmgs(a: &TmmgsArgs, ctx: &mut Ctx) -> CliResult<PathBuf> {
    let cal_path = pick(
        &a.calibration,
        &ctx.cfg.paths.calibration,
        "calibration sidecar",
        "--calibration",
    )?;
    let cal = load_calibration(&mut ctx.rec, Some(&cal_path), true)?;
    let plate_path = pick(
        &a.mg_plate,
        &ctx.cfg.paths.plate,
        "magenta-green clean plate",
        "--mg-plate",
    )?;
    let out = out_dir(&a.out_dir, ctx)?;
    let mode = flow_mode(&a.flow)?;
    let opts = MatteOptions {
        eps_alpha: ctx.cfg.eps_alpha,
        bounce_order: ctx.cfg.bounce_order,
        ..MatteOptions::default()
    };

    let mg_plate = cal.apply(&load_still(
        &mut ctx.rec,
        &ctx.cfg,
        "magenta-green clean plate",
        &plate_path,
    )?)?;
    let gm_plate = match &a.gm_plate {
        Some(p) => Some(cal.apply(&load_still(
            &mut ctx.rec,
            &ctx.cfg,
            "green-magenta clean plate",
            p,
        )?)?),
        None => None,
    };
    let bounce_spec = a
        .bounce_plate
        .clone()
        .or_else(|| ctx.cfg.paths.bounce_plate.clone());
    let mg_bounce = optional_plate(ctx, "bounce plate", bounce_spec.as_deref(), &cal)?;
    let gm_bounce = optional_plate(
        ctx,
        "green-magenta bounce plate",
        a.gm_bounce_plate.as_deref(),
        &cal,
    )?;
    if gm_bounce.is_some() && gm_plate.is_none() {
        return Err(CliError::unspecified(
            "green-magenta clean plate",
            "--gm-plate",
        ));
    }

    let (mg_seq, _) = load_frames(&mut ctx.rec, &ctx.cfg, "magenta-green sequence", &a.mg)?;
    let (gm_seq, _) = load_frames(&mut ctx.rec, &ctx.cfg, "green-magenta sequence", &a.gm)?;
    let n = paired_len(&mg_seq, &gm_seq, "tmmgs")?;
    let mg = calibrated(&mg_seq, &cal)?;
    let gm = calibrated(&gm_seq, &cal)?;
    let mg_idx = &mg_seq.indices()[..n];
    let gm_idx = &gm_seq.indices()[..n];

    let flow_cfg = ctx.cfg.flow;
    let estimate = move |x: &LinearImage, y: &LinearImage| Ok(align_by_red(x, y, &flow_cfg)?);
    let flows = midpoint_flows(&mut ctx.rec, &mg[..n], mg_idx, gm_idx, &mode, &estimate)?;

    let keyed: Vec<(LinearImage, ForegroundElement)> = (0..n)
        .into_par_iter()
        .map(|k| {
            let i = mg_idx[k];
            let mg_clean = match &mg_bounce {
                Some(b) => {
                    CleanPlate::with_bounce(mg_plate.clone(), b.at(i, "bounce plate")?.clone())
                }
                None => CleanPlate::new(mg_plate.clone()),
            };
            let gm_clean = match (&gm_plate, &gm_bounce) {
                (Some(p), Some(b)) => Some(CleanPlate::with_bounce(
                    p.clone(),
                    b.at(gm_idx[k], "green-magenta bounce plate")?.clone(),
                )),
                (Some(p), None) => Some(CleanPlate::new(p.clone())),
                (None, _) => None,
            };
            let (matte, elem) = reconstruct_tmmgs(
                &mg[k],
                &gm[k],
                &mg_clean,
                gm_clean.as_ref(),
                flows[k].as_ref(),
                &opts,
            )?;
            Ok((matte.into_alpha(), elem))
        })
        .collect::<CliResult<_>>()?;
    let (mattes, elements): (Vec<_>, Vec<_>) = keyed.into_iter().unzip();
    save_keyed(
        ctx,
        &out,
        &elements,
        mattes,
        "matte",
        mg_idx,
        mg_seq.frame_rate(),
        "tmmgs",
    )?;
    ctx.rec.param("mg", &a.mg);
    ctx.rec.param("gm", &a.gm);
    ctx.rec.param("flow", &a.flow);
    ctx.rec.param("pairs", n);
    Ok(out)
}

pub fn tmm_classic(a: &TmmClassicArgs, ctx: &mut Ctx) -> CliResult<PathBuf> {
    let cal = load_calibration(
        &mut ctx.rec,
        a.calibration
            .as_deref()
            .or(ctx.cfg.paths.calibration.as_deref()),
        false,
    )?;
    let out = out_dir(&a.out_dir, ctx)?;
    let mode = flow_mode(&a.flow)?;
    let level = cal.apply(&load_still(
        &mut ctx.rec,
        &ctx.cfg,
        "background level",
        &a.level,
    )?)?;
    let (lit_seq, _) = load_frames(&mut ctx.rec, &ctx.cfg, "lit sequence", &a.lit)?;
    let (sil_seq, _) = load_frames(&mut ctx.rec, &ctx.cfg, "silhouette sequence", &a.silhouette)?;
    let n = paired_len(&lit_seq, &sil_seq, "tmm-classic")?;
    let lit = calibrated(&lit_seq, &cal)?;
    let sil = calibrated(&sil_seq, &cal)?;
    let lit_idx = &lit_seq.indices()[..n];
    let sil_idx = &sil_seq.indices()[..n];

    let flow_cfg = ctx.cfg.flow;
    let estimate = move |x: &LinearImage, y: &LinearImage| {
        Ok(estimate_flow(
            &flow_plane(x, None)?,
            &flow_plane(y, None)?,
            &flow_cfg,
        )?)
    };
    let flows = midpoint_flows(&mut ctx.rec, &lit[..n], lit_idx, sil_idx, &mode, &estimate)?;

    let keyed: Vec<(LinearImage, ForegroundElement)> = (0..n)
        .into_par_iter()
        .map(|k| {
            let (matte, elem) = classic_tmm(&lit[k], &sil[k], &level, flows[k].as_ref())?;
            Ok((matte.alpha_rgb().clone(), elem))
        })
        .collect::<CliResult<_>>()?;
    let (mattes, elements): (Vec<_>, Vec<_>) = keyed.into_iter().unzip();
    save_keyed(
        ctx,
        &out,
        &elements,
        mattes,
        "color_matte",
        lit_idx,
        lit_seq.frame_rate(),
        "tmm-classic",
    )?;
    ctx.rec.param("lit", &a.lit);
    ctx.rec.param("silhouette", &a.silhouette);
    ctx.rec.param("flow", &a.flow);
    ctx.rec.param("pairs", n);
    Ok(out)
}

pub fn triangulate(a: &TriangulateArgs, ctx: &mut Ctx) -> CliResult<PathBuf> {
    let cal = load_calibration(
        &mut ctx.rec,
        a.calibration
            .as_deref()
            .or(ctx.cfg.paths.calibration.as_deref()),
        false,
    )?;
    let out = out_dir(&a.out_dir, ctx)?;
    let b1 = cal.apply(&load_still(
        &mut ctx.rec,
        &ctx.cfg,
        "first background",
        &a.b1,
    )?)?;
    let b2 = cal.apply(&load_still(
        &mut ctx.rec,
        &ctx.cfg,
        "second background",
        &a.b2,
    )?)?;
    let (s1, _) = load_frames(&mut ctx.rec, &ctx.cfg, "first sequence", &a.f1)?;
    let (s2, _) = load_frames(&mut ctx.rec, &ctx.cfg, "second sequence", &a.f2)?;
    let n = paired_len(&s1, &s2, "triangulate")?;
    let f1 = calibrated(&s1, &cal)?;
    let f2 = calibrated(&s2, &cal)?;
    let flow_cfg: FlowConfig = ctx.cfg.flow;

    type Solved = (
        ForegroundElement,
        LinearImage,
        LinearImage,
        Option<LinearImage>,
    );
    let solved: Vec<Solved> = (0..n)
        .into_par_iter()
        .map(|k| {
            let second = if a.align {
                let flow = align_by_red(&f1[k], &f2[k], &flow_cfg)?;
                warp(&f2[k], &flow, 1.0)?
            } else {
                f2[k].clone()
            };
            let tri = triangulation_matte(&f1[k], &b1, &second, &b2)?;
            let color = if a.color_matte {
                let (cm, _) = triangulation_color_matte(&f1[k], &b1, &second, &b2)?;
                Some(cm.alpha_rgb().clone())
            } else {
                None
            };
            Ok((
                tri.element,
                tri.matte.into_alpha(),
                tri.valid.to_image(),
                color,
            ))
        })
        .collect::<CliResult<_>>()?;

    let idx = &s1.indices()[..n];
    let rate = s1.frame_rate();
    let mut elements = Vec::with_capacity(n);
    let mut mattes = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    let mut color = Vec::with_capacity(n);
    for (e, m, v, c) in solved {
        elements.push(e);
        mattes.push(m);
        valid.push(v);
        color.extend(c);
    }
    save_keyed(
        ctx,
        &out,
        &elements,
        mattes,
        "matte",
        idx,
        rate,
        "triangulate",
    )?;
    save_frames(
        &mut ctx.rec,
        valid,
        idx,
        rate,
        "triangulate/valid",
        &frames_in(&out.join("valid")),
        &EncodeOptions::linear(),
        &BTreeMap::new(),
    )?;
    if a.color_matte {
        save_frames(
            &mut ctx.rec,
            color,
            idx,
            rate,
            "triangulate/color_matte",
            &frames_in(&out.join("color_matte")),
            &EncodeOptions::linear(),
            &BTreeMap::new(),
        )?;
    }
    ctx.rec.param("f1", &a.f1);
    ctx.rec.param("f2", &a.f2);
    ctx.rec.param("align", a.align);
    ctx.rec.param("color_matte", a.color_matte);
    ctx.rec.param("pairs", n);
    Ok(out)
}
