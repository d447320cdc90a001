use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mgs_core::flow::{estimate_flow, FlowField};
use mgs_core::image::io::{EncodeOptions, FramePattern};
use mgs_core::image::LinearImage;
use mgs_core::matting::MatteChannel;
use mgs_core::multiplex::simulate_motion_blur;
use rayon::prelude::*;

use super::pattern_dir;
use crate::config::require_file;
use crate::error::{CliError, CliResult};
use crate::files::{
    flow_plane, load_frames, load_still, parse_pair, save_frames, schedule_from_meta,
};
use crate::{BlurArgs, Ctx, FlowArgs};

fn flow_channel(s: &str) -> CliResult<Option<usize>> {
    if s.eq_ignore_ascii_case("mean") {
        return Ok(None);
    }
    let mc: MatteChannel = s.parse()?;
    Ok(Some(mc.index()))
}

fn write_flow(ctx: &mut Ctx, flow: &FlowField, path: &Path) -> CliResult<()> {
    flow.write(path)?;
    ctx.rec.output(path);
    Ok(())
}

pub fn flow(a: &FlowArgs, ctx: &mut Ctx) -> CliResult<PathBuf> {
    let channel = flow_channel(&a.channel)?;
    let cfg = ctx.cfg.flow;
    ctx.rec.param("input", &a.input);
    ctx.rec.param("channel", &a.channel);
    if let Some(to) = &a.to {
        let x = load_still(&mut ctx.rec, &ctx.cfg, "first frame", Path::new(&a.input))?;
        let y = load_still(&mut ctx.rec, &ctx.cfg, "second frame", Path::new(to))?;
        let f = estimate_flow(&flow_plane(&x, channel)?, &flow_plane(&y, channel)?, &cfg)?;
        if f.low_confidence {
            eprintln!("warning: frames are nearly textureless, flow is unreliable");
        }
        write_flow(ctx, &f, Path::new(&a.out))?;
        ctx.rec.param("to", to);
        ctx.rec.param("mean_flow", format!("{:?}", f.mean_flow(0)));
        return Ok(pattern_dir(&a.out));
    }

    if a.step == 0 {
        return Err(CliError::invalid("step", "must be at least 1"));
    }
    let out = FramePattern::parse(&a.out)?;
    if !out.is_numbered() {
        return Err(CliError::invalid(
            "out",
            "a sequence input needs an output pattern with a frame token",
        ));
    }
    let (seq, _) = load_frames(&mut ctx.rec, &ctx.cfg, "input sequence", &a.input)?;
    let planes: Vec<LinearImage> = seq
        .frames()
        .iter()
        .map(|f| flow_plane(f, channel))
        .collect::<CliResult<_>>()?;
    let idx = seq.indices();
    let pairs = planes.len().saturating_sub(a.step);
    if pairs == 0 {
        return Err(CliError::invalid(
            "input sequence",
            format!("{} frames give no pairs at step {}", planes.len(), a.step),
        ));
    }
    let flows: Vec<FlowField> = (0..pairs)
        .into_par_iter()
        .map(|k| {
            let f = estimate_flow(&planes[k], &planes[k + a.step], &cfg)?;
            Ok(f.with_frames(idx[k], idx[k + a.step]))
        })
        .collect::<CliResult<_>>()?;
    for f in &flows {
        if f.low_confidence {
            eprintln!(
                "warning: frame {} is nearly textureless, flow is unreliable",
                f.source
            );
        }
        write_flow(ctx, f, &out.path(f.source))?;
    }
    ctx.rec.param("step", a.step);
    ctx.rec.param("pairs", pairs);
    Ok(pattern_dir(&a.out))
}

enum BlurFlow {
    Uniform(f64, f64),
    Still(FlowField),
    PerFrame(FramePattern),
}

pub fn blur(a: &BlurArgs, ctx: &mut Ctx) -> CliResult<PathBuf> {
    let (seq, meta) = load_frames(&mut ctx.rec, &ctx.cfg, "input sequence", &a.input)?;
    let source = match (&a.flow, &a.velocity) {
        (Some(_), Some(_)) => {
            return Err(CliError::invalid(
                "blur",
                "give --flow or --velocity, not both",
            ))
        }
        (None, None) => return Err(CliError::unspecified("flow", "--flow or --velocity")),
        (None, Some(v)) => {
            let (u, v) = parse_pair("velocity", v)?;
            BlurFlow::Uniform(u, v)
        }
        (Some(spec), None) => {
            let pat = FramePattern::parse(spec)?;
            if pat.is_numbered() {
                BlurFlow::PerFrame(pat)
            } else {
                require_file("flow file", Path::new(spec))?;
                ctx.rec.input(spec);
                BlurFlow::Still(FlowField::read(spec)?)
            }
        }
    };
    let shutter = match a.shutter {
        Some(s) => s,
        None => schedule_from_meta(&meta)?
            .or_else(|| ctx.cfg.schedule.clone())
            .map(|s| s.shutter_fraction)
            .unwrap_or(0.5),
    };

    // A frame without its own flow file keeps the previous frame's flow.
    let mut flows: Vec<FlowField> = Vec::with_capacity(seq.len());
    for (frame, &i) in seq.frames().iter().zip(seq.indices()) {
        let f = match &source {
            BlurFlow::Uniform(u, v) => FlowField::uniform(frame.width(), frame.height(), *u, *v),
            BlurFlow::Still(f) => f.clone(),
            BlurFlow::PerFrame(pat) => {
                let path = pat.path(i);
                match (path.is_file(), flows.last()) {
                    (true, _) => {
                        ctx.rec.input(path.clone());
                        FlowField::read(&path)?
                    }
                    (false, Some(prev)) => prev.clone(),
                    (false, None) => return Err(CliError::missing("flow file", path)),
                }
            }
        };
        flows.push(f);
    }
    let blurred: Vec<LinearImage> = seq
        .frames()
        .par_iter()
        .zip(flows.par_iter())
        .map(|(frame, flow)| Ok(simulate_motion_blur(frame, flow, shutter)?))
        .collect::<CliResult<_>>()?;
    save_frames(
        &mut ctx.rec,
        blurred,
        seq.indices(),
        seq.frame_rate(),
        &format!("{}/blur", seq.label()),
        &a.out,
        &EncodeOptions::with_transfer(meta.transfer),
        &BTreeMap::new(),
    )?;
    ctx.rec.param("input", &a.input);
    ctx.rec.param("shutter_fraction", shutter);
    Ok(pattern_dir(&a.out))
}
