//! Time-multiplexed capture: lighting schedules, demultiplexing, and the
//! reconstructions that combine neighbouring frames.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::compositing::ColorMatte;
use crate::error::{Error, Result};
use crate::flow::{warp, FlowEstimator, FlowField};
use crate::image::{FrameSequence, LinearImage, PixelMask};
use crate::matting::{
    solve_matte, CleanPlate, ColorizationState, ForegroundElement, MatteChannel, MatteFrame,
    MatteOptions, MatteSource,
};

/// Pixels whose backgrounds differ by less than this (squared, summed over
/// channels) cannot be triangulated.
pub const MIN_BACKGROUND_SEPARATION: f64 = 1e-6;

/// A stage lighting state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    /// Subject under red+blue light, green screen.
    MagentaGreen,
    /// Subject under green light, magenta screen.
    GreenMagenta,
    /// Subject under red+green light, blue screen.
    YellowBlue,
    /// Subject under white light, dark screen.
    WhiteLitBlack,
    /// Unlit subject against a white screen.
    SilhouetteWhite,
    /// White-lit subject, green screen.
    BackgroundGreen,
    /// White-lit subject, blue screen.
    BackgroundBlue,
    /// Magenta-green lighting with no subject.
    CleanPlate,
    /// Screen off, subject lit: only bounce light reaches the background.
    BouncePlate,
}

impl Condition {
    pub const ALL: [Condition; 9] = [
        Condition::MagentaGreen,
        Condition::GreenMagenta,
        Condition::YellowBlue,
        Condition::WhiteLitBlack,
        Condition::SilhouetteWhite,
        Condition::BackgroundGreen,
        Condition::BackgroundBlue,
        Condition::CleanPlate,
        Condition::BouncePlate,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Condition::MagentaGreen => "magenta-green",
            Condition::GreenMagenta => "green-magenta",
            Condition::YellowBlue => "yellow-blue",
            Condition::WhiteLitBlack => "white-lit-black",
            Condition::SilhouetteWhite => "silhouette-white",
            Condition::BackgroundGreen => "background-green",
            Condition::BackgroundBlue => "background-blue",
            Condition::CleanPlate => "clean-plate",
            Condition::BouncePlate => "bounce-plate",
        }
    }

    /// Two-letter form used in file names and schedules.
    pub fn short(self) -> &'static str {
        match self {
            Condition::MagentaGreen => "mg",
            Condition::GreenMagenta => "gm",
            Condition::YellowBlue => "yb",
            Condition::WhiteLitBlack => "lit",
            Condition::SilhouetteWhite => "sil",
            Condition::BackgroundGreen => "bgg",
            Condition::BackgroundBlue => "bgb",
            Condition::CleanPlate => "plate",
            Condition::BouncePlate => "bounce",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Condition::ALL
            .into_iter()
            .find(|c| c.label() == s || c.short() == s)
            .ok_or_else(|| Error::structural(format!("unknown lighting condition '{s}'")))
    }
}

/// A cyclic lighting pattern and the camera synchronised to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LightingSchedule {
    pub conditions: Vec<Condition>,
    /// Lighting changes per second.
    pub flash_rate: f64,
    /// Camera frames per second.
    pub camera_rate: f64,
    /// Index into `conditions` of the state lit during frame 0.
    pub phase: usize,
    /// Exposed fraction of each frame interval.
    pub shutter_fraction: f64,
}

impl LightingSchedule {
    pub fn new(
        conditions: Vec<Condition>,
        flash_rate: f64,
        camera_rate: f64,
        phase: usize,
        shutter_fraction: f64,
    ) -> Result<Self> {
        let s = Self {
            conditions,
            flash_rate,
            camera_rate,
            phase,
            shutter_fraction,
        };
        s.validate()?;
        Ok(s)
    }

    /// Alternating magenta-green / green-magenta at 144 changes per second
    /// filmed at 48 fps: every third change, so the frames alternate.
    pub fn tmmgs_48fps(shutter_fraction: f64) -> Result<Self> {
        Self::new(
            vec![Condition::MagentaGreen, Condition::GreenMagenta],
            144.0,
            48.0,
            0,
            shutter_fraction,
        )
    }

    /// The same lighting filmed at 24 fps: every frame sees the first of six
    /// changes, always magenta-green.
    pub fn mg_24fps(shutter_fraction: f64) -> Result<Self> {
        Self::new(
            vec![Condition::MagentaGreen, Condition::GreenMagenta],
            144.0,
            24.0,
            0,
            shutter_fraction,
        )
    }

    /// A schedule where each frame gets the next condition in turn.
    pub fn alternating(
        conditions: Vec<Condition>,
        camera_rate: f64,
        shutter_fraction: f64,
    ) -> Result<Self> {
        Self::new(conditions, camera_rate, camera_rate, 0, shutter_fraction)
    }

    pub fn validate(&self) -> Result<()> {
        if self.conditions.is_empty() {
            return Err(Error::Parameter("schedule has no conditions".into()));
        }
        if self.phase >= self.conditions.len() {
            return Err(Error::Parameter(format!(
                "phase {} out of range for {} conditions",
                self.phase,
                self.conditions.len()
            )));
        }
        for (name, r) in [
            ("flash rate", self.flash_rate),
            ("camera rate", self.camera_rate),
        ] {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Parameter(format!(
                    "{name} must be positive, got {r}"
                )));
            }
        }
        let ratio = self.flash_rate / self.camera_rate;
        if ratio < 1.0 - 1e-9 || (ratio - ratio.round()).abs() > 1e-9 {
            return Err(Error::Parameter(format!(
                "flash rate {} is not an integer multiple of camera rate {}",
                self.flash_rate, self.camera_rate
            )));
        }
        if !(self.shutter_fraction > 0.0 && self.shutter_fraction <= 1.0) {
            return Err(Error::Parameter(format!(
                "shutter fraction must lie in (0, 1], got {}",
                self.shutter_fraction
            )));
        }
        if self.shutter_fraction * ratio > 1.0 + 1e-12 {
            return Err(Error::Parameter(format!(
                "shutter fraction {} exceeds one lighting state (at most 1/{})",
                self.shutter_fraction,
                ratio.round()
            )));
        }
        Ok(())
    }

    /// Lighting changes per camera frame.
    pub fn changes_per_frame(&self) -> usize {
        (self.flash_rate / self.camera_rate).round() as usize
    }

    /// Largest shutter fraction the schedule admits.
    pub fn max_shutter_fraction(&self) -> f64 {
        1.0 / self.changes_per_frame() as f64
    }

    pub fn shutter_angle_degrees(&self) -> f64 {
        360.0 * self.shutter_fraction
    }

    /// Index of the lighting change during which frame `i` is exposed.
    pub fn lighting_change(&self, frame: usize) -> usize {
        self.phase + frame * self.changes_per_frame()
    }

    /// The condition recorded by camera frame `frame`.
    pub fn captured_condition(&self, frame: usize) -> Condition {
        self.conditions[self.lighting_change(frame) % self.conditions.len()]
    }

    /// Time in seconds of the middle of frame `frame`'s exposure.
    pub fn exposure_midpoint(&self, frame: usize) -> f64 {
        (frame as f64 + 0.5 * self.shutter_fraction) / self.camera_rate
    }

    /// Conditions that actually reach the camera, in first-seen order.
    pub fn recorded_conditions(&self) -> Vec<Condition> {
        let mut seen = Vec::new();
        for i in 0..self.conditions.len() {
            let c = self.captured_condition(i);
            if !seen.contains(&c) {
                seen.push(c);
            }
        }
        seen
    }
}

/// Splits a sequence into one stream per recorded condition.
///
/// Frames keep their original indices and frame rate, so timestamps survive.
pub fn demux(
    seq: &FrameSequence,
    schedule: &LightingSchedule,
) -> Result<BTreeMap<Condition, FrameSequence>> {
    schedule.validate()?;
    if (seq.frame_rate() - schedule.camera_rate).abs() > 1e-9 * schedule.camera_rate {
        return Err(Error::structural(format!(
            "sequence is {} fps but schedule expects {} fps",
            seq.frame_rate(),
            schedule.camera_rate
        )));
    }
    let mut buckets: BTreeMap<Condition, (Vec<LinearImage>, Vec<usize>)> = BTreeMap::new();
    for (frame, &index) in seq.frames().iter().zip(seq.indices()) {
        let entry = buckets
            .entry(schedule.captured_condition(index))
            .or_default();
        entry.0.push(frame.clone());
        entry.1.push(index);
    }
    buckets
        .into_iter()
        .map(|(cond, (frames, indices))| {
            let label = format!("{}/{}", seq.label(), cond.short());
            FrameSequence::with_indices(frames, indices, seq.frame_rate(), label).map(|s| (cond, s))
        })
        .collect()
}

/// Merges demultiplexed streams back into one sequence ordered by timestamp.
pub fn remux(streams: &BTreeMap<Condition, FrameSequence>, label: &str) -> Result<FrameSequence> {
    let mut rate = None;
    let mut all: Vec<(usize, &LinearImage)> = Vec::new();
    for seq in streams.values() {
        match rate {
            None => rate = Some(seq.frame_rate()),
            Some(r) if r != seq.frame_rate() => {
                return Err(Error::structural("streams have different frame rates"));
            }
            _ => {}
        }
        all.extend(seq.indices().iter().copied().zip(seq.frames()));
    }
    let rate = rate.ok_or_else(|| Error::EmptySequence("no streams to merge".into()))?;
    all.sort_by_key(|(i, _)| *i);
    if all.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::structural("streams share a frame index"));
    }
    let (indices, frames): (Vec<usize>, Vec<LinearImage>) =
        all.into_iter().map(|(i, f)| (i, f.clone())).unzip();
    FrameSequence::with_indices(frames, indices, rate, label)
}

/// Full-colour element from a magenta-green frame and the green-magenta
/// frame that follows it.
///
/// α and the red/blue channels come from keying `mg` against `mg_plate`. The
/// green channel is the green-magenta frame's green, displaced by half of
/// `flow` (which maps this magenta-green frame to the next one). If
/// `gm_plate` is given, its green background and bounce are removed using
/// the magenta-green holdout.
pub fn reconstruct_tmmgs(
    mg: &LinearImage,
    gm: &LinearImage,
    mg_plate: &CleanPlate,
    gm_plate: Option<&CleanPlate>,
    flow: Option<&FlowField>,
    opts: &MatteOptions,
) -> Result<(MatteFrame, ForegroundElement)> {
    mg.check_shape(gm, "magenta-green vs green-magenta frame")?;
    let (matte, keyed) = solve_matte(mg, mg_plate, MatteChannel::Green, opts)?;
    let green = gm.channel(1);
    let mut green = match flow {
        Some(f) => warp(&green, f, 0.5)?,
        None => green,
    };
    if let Some(plate) = gm_plate {
        gm.check_shape(&plate.background, "green-magenta frame vs plate")?;
        let alpha = matte.alpha().data();
        let bg = plate.background.channel(1);
        let bounce = plate.bounce.as_ref().map(|b| b.channel(1));
        for (i, g) in green.data_mut().iter_mut().enumerate() {
            let holdout = 1.0 - alpha[i];
            *g -= holdout * bg.data()[i];
            if let Some(b) = &bounce {
                *g -= holdout * b.data()[i];
            }
        }
    }
    for (g, &a) in green.data_mut().iter_mut().zip(matte.alpha().data()) {
        if a == 0.0 {
            *g = 0.0;
        }
    }
    let element = keyed.with_restored_channel(&green, ColorizationState::Reference)?;
    Ok((matte, element))
}

/// Classic two-frame matting: a white-lit subject on black, then the unlit
/// subject in silhouette against a lit screen of known level.
///
/// α is computed per channel as `1 − silhouette / level`, displaced by half
/// of `flow` (lit frame to the next lit frame) when given. The element colour
/// is the lit frame itself.
pub fn classic_tmm(
    lit: &LinearImage,
    silhouette: &LinearImage,
    background_level: &LinearImage,
    flow: Option<&FlowField>,
) -> Result<(ColorMatte, ForegroundElement)> {
    lit.check_channels(3, "lit frame")?;
    lit.check_shape(silhouette, "lit vs silhouette frame")?;
    lit.check_shape(background_level, "lit frame vs background level")?;
    if let Some(v) = background_level.data().iter().find(|v| !(**v > 0.0)) {
        return Err(Error::BackgroundLevel(format!(
            "silhouette background level must be positive, found {v}"
        )));
    }
    let alpha = silhouette
        .zip_map(background_level, |s, l| (1.0 - s / l).clamp(0.0, 1.0))
        .expect("shapes checked");
    let alpha = match flow {
        Some(f) => warp(&alpha, f, 0.5)?,
        None => alpha,
    };
    let matte = ColorMatte::new(alpha)?;
    let element = ForegroundElement::new(
        lit.clone(),
        matte.mean_alpha(),
        ColorizationState::Reference,
        None,
    )?;
    Ok((matte, element))
}

/// Which pixels a triangulation could solve.
#[derive(Clone, Debug, PartialEq)]
pub struct Triangulation {
    pub matte: MatteFrame,
    pub element: ForegroundElement,
    pub valid: PixelMask,
}

fn check_triangulation(
    f1: &LinearImage,
    b1: &LinearImage,
    f2: &LinearImage,
    b2: &LinearImage,
) -> Result<()> {
    f1.check_channels(3, "triangulation frame")?;
    for (img, what) in [
        (b1, "first background"),
        (f2, "second frame"),
        (b2, "second background"),
    ] {
        f1.check_shape(img, what)?;
    }
    Ok(())
}

/// Generalised least-squares triangulation over all three channels.
///
/// Pixels whose backgrounds are too close are marked invalid and keyed
/// opaque with the mean observed colour.
pub fn triangulation_matte(
    f1: &LinearImage,
    b1: &LinearImage,
    f2: &LinearImage,
    b2: &LinearImage,
) -> Result<Triangulation> {
    check_triangulation(f1, b1, f2, b2)?;
    let (w, h) = f1.dims();
    let n = f1.pixel_count();
    let mut alpha = LinearImage::zeros(w, h, 1);
    let mut rgb = LinearImage::zeros(w, h, 3);
    let mut valid = vec![true; n];
    let pixels = f1
        .pixels()
        .zip(b1.pixels())
        .zip(f2.pixels().zip(b2.pixels()));
    for (i, ((c1, p1), (c2, p2))) in pixels.enumerate() {
        let mut num = 0.0;
        let mut den = 0.0;
        for c in 0..3 {
            let db = p1[c] - p2[c];
            num += (c1[c] - c2[c]) * db;
            den += db * db;
        }
        let out = rgb.pixel_mut(i % w, i / w);
        if den < MIN_BACKGROUND_SEPARATION {
            valid[i] = false;
            alpha.data_mut()[i] = 1.0;
            for c in 0..3 {
                out[c] = 0.5 * (c1[c] + c2[c]);
            }
            continue;
        }
        let a = (1.0 - num / den).clamp(0.0, 1.0);
        alpha.data_mut()[i] = a;
        if a == 0.0 {
            continue;
        }
        let t = 1.0 - a;
        for c in 0..3 {
            out[c] = 0.5 * ((c1[c] - t * p1[c]) + (c2[c] - t * p2[c]));
        }
    }
    let matte = MatteFrame::new(alpha.clone(), MatteSource::Triangulation)?;
    let element = ForegroundElement::new(rgb, alpha, ColorizationState::Reference, None)?;
    Ok(Triangulation {
        matte,
        element,
        valid: PixelMask::from_vec(w, h, valid)?,
    })
}

/// Per-channel triangulation: `α_c = 1 − (C1_c − C2_c)/(B1_c − B2_c)` for
/// channels whose backgrounds differ, the least-squares scalar α for the rest.
///
/// Returns the colour matte and, per channel, where it was solved directly.
pub fn triangulation_color_matte(
    f1: &LinearImage,
    b1: &LinearImage,
    f2: &LinearImage,
    b2: &LinearImage,
) -> Result<(ColorMatte, [PixelMask; 3])> {
    let scalar = triangulation_matte(f1, b1, f2, b2)?;
    let (w, h) = f1.dims();
    let mut solved = [vec![false; w * h], vec![false; w * h], vec![false; w * h]];
    let alpha_rgb = LinearImage::from_fn(w, h, 3, |x, y, c| {
        let db = b1.get(x, y, c) - b2.get(x, y, c);
        if db * db < MIN_BACKGROUND_SEPARATION {
            return scalar.matte.alpha().get(x, y, 0);
        }
        1.0 - (f1.get(x, y, c) - f2.get(x, y, c)) / db
    });
    for (c, mask) in solved.iter_mut().enumerate() {
        for (i, m) in mask.iter_mut().enumerate() {
            let db = b1.data()[3 * i + c] - b2.data()[3 * i + c];
            *m = db * db >= MIN_BACKGROUND_SEPARATION;
        }
    }
    let [r, g, b] = solved;
    Ok((
        ColorMatte::new(alpha_rgb)?,
        [
            PixelMask::from_vec(w, h, r)?,
            PixelMask::from_vec(w, h, g)?,
            PixelMask::from_vec(w, h, b)?,
        ],
    ))
}

/// Flow between the red channels of two frames that share red lighting.
pub fn align_by_red(
    f1: &LinearImage,
    f2: &LinearImage,
    estimator: &dyn FlowEstimator,
) -> Result<FlowField> {
    f1.check_channels(3, "alignment frame")?;
    f1.check_shape(f2, "alignment frames")?;
    estimator.estimate(&f1.channel(0), &f2.channel(0))
}

/// Box-shutter motion blur: each pixel averages `N` samples along
/// `shutter_fraction · flow`, centred on the pixel, with
/// `N = max(3, ⌈max displacement⌉)`.
pub fn simulate_motion_blur(
    frame: &LinearImage,
    flow: &FlowField,
    shutter_fraction: f64,
) -> Result<LinearImage> {
    if !(shutter_fraction > 0.0 && shutter_fraction <= 1.0) {
        return Err(Error::Parameter(format!(
            "shutter fraction must lie in (0, 1], got {shutter_fraction}"
        )));
    }
    if frame.dims() != flow.dims() {
        return Err(Error::structural(
            "motion blur: frame and flow sizes differ",
        ));
    }
    let reach = flow.max_magnitude() * shutter_fraction;
    let n = (reach.ceil() as usize).max(3);
    let (w, h) = frame.dims();
    Ok(LinearImage::from_pixel_fn(
        w,
        h,
        frame.channels(),
        |x, y, px| {
            let (u, v) = flow.at(x, y);
            px.iter_mut().for_each(|p| *p = 0.0);
            for k in 0..n {
                let t = -0.5 + (k as f64 + 0.5) / n as f64;
                let sx = x as f64 + t * shutter_fraction * u;
                let sy = y as f64 + t * shutter_fraction * v;
                for (c, p) in px.iter_mut().enumerate() {
                    *p += frame.sample_bilinear(sx, sy, c);
                }
            }
            px.iter_mut().for_each(|p| *p /= n as f64);
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn numbered(n: usize, rate: f64) -> FrameSequence {
        let frames = (0..n)
            .map(|i| LinearImage::filled(2, 2, 3, i as f64))
            .collect();
        FrameSequence::new(frames, rate, "seq").unwrap()
    }

    #[test]
    fn condition_labels_round_trip() {
        for c in Condition::ALL {
            assert_eq!(c.label().parse::<Condition>().unwrap(), c);
            assert_eq!(c.short().parse::<Condition>().unwrap(), c);
        }
        assert!("purple".parse::<Condition>().is_err());
    }

    #[test]
    fn alternating_demux_splits_even_and_odd() {
        let sched = LightingSchedule::alternating(
            vec![Condition::MagentaGreen, Condition::GreenMagenta],
            48.0,
            0.25,
        )
        .unwrap();
        let out = demux(&numbered(6, 48.0), &sched).unwrap();
        assert_eq!(out[&Condition::MagentaGreen].indices(), &[0, 2, 4]);
        assert_eq!(out[&Condition::GreenMagenta].indices(), &[1, 3, 5]);
        assert_eq!(out[&Condition::GreenMagenta].frames()[1].get(0, 0, 0), 3.0);
        assert_eq!(out[&Condition::GreenMagenta].timestamp(1), 3.0 / 48.0);
    }

    #[test]
    fn phase_one_swaps_assignment() {
        let sched = LightingSchedule::new(
            vec![Condition::MagentaGreen, Condition::GreenMagenta],
            48.0,
            48.0,
            1,
            0.5,
        )
        .unwrap();
        let out = demux(&numbered(6, 48.0), &sched).unwrap();
        assert_eq!(out[&Condition::GreenMagenta].indices(), &[0, 2, 4]);
        assert_eq!(out[&Condition::MagentaGreen].indices(), &[1, 3, 5]);
    }

    #[test]
    fn single_condition_is_identity() {
        let seq = numbered(4, 24.0);
        let sched =
            LightingSchedule::alternating(vec![Condition::MagentaGreen], 24.0, 0.5).unwrap();
        let out = demux(&seq, &sched).unwrap();
        assert_eq!(out.len(), 1);
        let only = &out[&Condition::MagentaGreen];
        assert_eq!(only.frames(), seq.frames());
        assert_eq!(only.indices(), seq.indices());
    }

    #[test]
    fn rate_mismatch_is_structural() {
        let sched = LightingSchedule::tmmgs_48fps(1.0 / 3.0).unwrap();
        assert!(matches!(
            demux(&numbered(4, 24.0), &sched),
            Err(Error::Structural(_))
        ));
    }

    #[test]
    fn seventy_two_hertz_pattern_at_24fps_records_first_of_six() {
        let s = LightingSchedule::mg_24fps(1.0 / 6.0).unwrap();
        assert_eq!(s.changes_per_frame(), 6);
        assert!((s.shutter_angle_degrees() - 60.0).abs() < 1e-12);
        for i in 0..48 {
            assert_eq!(s.lighting_change(i), 6 * i);
            assert_eq!(s.captured_condition(i), Condition::MagentaGreen);
        }
        assert_eq!(s.recorded_conditions(), vec![Condition::MagentaGreen]);
        assert!(LightingSchedule::mg_24fps(0.17).is_err());
    }

    #[test]
    fn forty_eight_fps_records_every_third_change() {
        let s = LightingSchedule::tmmgs_48fps(1.0 / 3.0).unwrap();
        assert_eq!(s.changes_per_frame(), 3);
        let got: Vec<_> = (0..4).map(|i| s.captured_condition(i)).collect();
        use Condition::*;
        assert_eq!(
            got,
            vec![MagentaGreen, GreenMagenta, MagentaGreen, GreenMagenta]
        );
        // 105 degrees fits inside one lighting state at this rate.
        assert!(LightingSchedule::tmmgs_48fps(105.0 / 360.0).is_ok());
        assert!(LightingSchedule::tmmgs_48fps(0.34).is_err());
    }

    #[test]
    fn schedule_rejects_non_integer_ratio() {
        assert!(LightingSchedule::new(vec![Condition::MagentaGreen], 100.0, 48.0, 0, 0.1).is_err());
        assert!(LightingSchedule::new(vec![Condition::MagentaGreen], 24.0, 48.0, 0, 0.1).is_err());
        assert!(LightingSchedule::new(vec![], 48.0, 48.0, 0, 0.1).is_err());
        assert!(LightingSchedule::new(vec![Condition::MagentaGreen], 48.0, 48.0, 1, 0.1).is_err());
    }

    proptest! {
        #[test]
        fn demux_partitions_and_remux_restores(n in 1usize..20, k in 1usize..4, phase_seed in 0usize..8, ratio in 1usize..4) {
            let conds: Vec<Condition> = Condition::ALL[..k].to_vec();
            let phase = phase_seed % k;
            let sched = LightingSchedule::new(conds, 24.0 * ratio as f64, 24.0, phase, 1.0 / ratio as f64).unwrap();
            let seq = numbered(n, 24.0);
            let out = demux(&seq, &sched).unwrap();
            let total: usize = out.values().map(|s| s.len()).sum();
            prop_assert_eq!(total, n);
            let back = remux(&out, "seq").unwrap();
            prop_assert_eq!(back.frames(), seq.frames());
            prop_assert_eq!(back.indices(), seq.indices());
            for (cond, s) in &out {
                for &i in s.indices() {
                    prop_assert_eq!(sched.captured_condition(i), *cond);
                }
            }
        }
    }

    fn forward(alpha: f64, f: [f64; 3], b: [f64; 3]) -> LinearImage {
        LinearImage::uniform(
            1,
            1,
            &[
                alpha * f[0] + (1.0 - alpha) * b[0],
                alpha * f[1] + (1.0 - alpha) * b[1],
                alpha * f[2] + (1.0 - alpha) * b[2],
            ],
        )
    }

    #[test]
    fn triangulation_worked_example() {
        let c1 = forward(0.5, [0.4; 3], [0.0, 1.0, 0.0]);
        let c2 = forward(0.5, [0.4; 3], [0.0, 0.0, 1.0]);
        for (got, want) in c1.pixel(0, 0).iter().zip([0.2, 0.7, 0.2]) {
            assert!((got - want).abs() < 1e-15);
        }
        for (got, want) in c2.pixel(0, 0).iter().zip([0.2, 0.2, 0.7]) {
            assert!((got - want).abs() < 1e-15);
        }
        let b1 = LinearImage::uniform(1, 1, &[0.0, 1.0, 0.0]);
        let b2 = LinearImage::uniform(1, 1, &[0.0, 0.0, 1.0]);
        let t = triangulation_matte(&c1, &b1, &c2, &b2).unwrap();
        assert!((t.matte.alpha().get(0, 0, 0) - 0.5).abs() < 1e-12);
        let f = t.element.unpremultiplied(1e-6).unwrap();
        for v in f.pixel(0, 0) {
            assert!((v - 0.4).abs() < 1e-12);
        }
        assert!(t.valid.all());
    }

    #[test]
    fn triangulation_degenerate_and_opaque() {
        let b = LinearImage::uniform(2, 2, &[0.0, 1.0, 0.0]);
        let c = LinearImage::uniform(2, 2, &[0.3, 0.6, 0.1]);
        let t = triangulation_matte(&c, &b, &c, &b).unwrap();
        assert!(t.valid.none());
        let b2 = LinearImage::uniform(2, 2, &[0.0, 0.0, 1.0]);
        let t = triangulation_matte(&c, &b, &c, &b2).unwrap();
        assert!(t.matte.alpha().data().iter().all(|&a| a == 1.0));
        assert_eq!(t.element.rgb(), &c);
    }

    proptest! {
        #[test]
        fn triangulation_inverts_forward_model(
            alpha in 0.0f64..=1.0,
            f in proptest::array::uniform3(0.0f64..1.0),
            b1 in proptest::array::uniform3(0.0f64..1.0),
            b2 in proptest::array::uniform3(0.0f64..1.0),
        ) {
            let sep: f64 = (0..3).map(|c| (b1[c] - b2[c]).powi(2)).sum();
            prop_assume!(sep > 0.01);
            let f1 = forward(alpha, f, b1);
            let f2 = forward(alpha, f, b2);
            let t = triangulation_matte(&f1, &LinearImage::uniform(1, 1, &b1), &f2, &LinearImage::uniform(1, 1, &b2)).unwrap();
            prop_assert!((t.matte.alpha().get(0, 0, 0) - alpha).abs() < 1e-9);
            for c in 0..3 {
                prop_assert!((t.element.rgb().get(0, 0, c) - alpha * f[c]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn per_channel_triangulation_recovers_coloured_transparency() {
        let a = [0.9, 0.3, 0.6];
        let f = [0.2, 0.5, 0.1];
        let b1 = [0.0, 1.0, 0.0];
        let b2 = [0.0, 0.0, 1.0];
        let c = |b: [f64; 3]| {
            LinearImage::uniform(
                1,
                1,
                &[
                    a[0] * f[0] + (1.0 - a[0]) * b[0],
                    a[1] * f[1] + (1.0 - a[1]) * b[1],
                    a[2] * f[2] + (1.0 - a[2]) * b[2],
                ],
            )
        };
        let (m, solved) = triangulation_color_matte(
            &c(b1),
            &LinearImage::uniform(1, 1, &b1),
            &c(b2),
            &LinearImage::uniform(1, 1, &b2),
        )
        .unwrap();
        assert!(solved[1].all() && solved[2].all() && solved[0].none());
        assert!((m.alpha_rgb().get(0, 0, 1) - 0.3).abs() < 1e-12);
        assert!((m.alpha_rgb().get(0, 0, 2) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn classic_tmm_limits() {
        let lit = LinearImage::uniform(2, 2, &[0.2, 0.3, 0.4]);
        let level = LinearImage::uniform(2, 2, &[0.8, 0.9, 1.0]);
        let (m, e) = classic_tmm(&lit, &LinearImage::zeros(2, 2, 3), &level, None).unwrap();
        assert!(m.alpha_rgb().data().iter().all(|&a| a == 1.0));
        assert_eq!(e.rgb(), &lit);
        let (m, _) = classic_tmm(&lit, &level, &level, None).unwrap();
        assert!(m.alpha_rgb().data().iter().all(|&a| a == 0.0));
        let sil = LinearImage::uniform(2, 2, &[0.4, 0.45, 0.25]);
        let (m, _) = classic_tmm(&lit, &sil, &level, None).unwrap();
        let px = m.alpha_rgb().pixel(1, 1);
        assert!(
            (px[0] - 0.5).abs() < 1e-12
                && (px[1] - 0.5).abs() < 1e-12
                && (px[2] - 0.75).abs() < 1e-12
        );
        let bad = LinearImage::uniform(2, 2, &[0.8, 0.0, 1.0]);
        assert!(matches!(
            classic_tmm(&lit, &sil, &bad, None),
            Err(Error::BackgroundLevel(_))
        ));
    }

    fn box_oracle(img: &LinearImage, taps: &[isize]) -> LinearImage {
        let (w, _) = img.dims();
        LinearImage::from_fn(img.width(), img.height(), img.channels(), |x, y, c| {
            taps.iter()
                .map(|d| img.get((x as isize + d).clamp(0, w as isize - 1) as usize, y, c))
                .sum::<f64>()
                / taps.len() as f64
        })
    }

    #[test]
    fn motion_blur_matches_five_tap_box() {
        let img = LinearImage::from_fn(40, 8, 1, |x, y, _| ((x * 7 + y * 3) % 11) as f64 / 10.0);
        let flow = FlowField::uniform(40, 8, 10.0, 0.0);
        let out = simulate_motion_blur(&img, &flow, 0.5).unwrap();
        let oracle = box_oracle(&img, &[-2, -1, 0, 1, 2]);
        assert!(out.max_abs_diff(&oracle).unwrap() < 1e-12);
    }

    #[test]
    fn motion_blur_identity_cases() {
        let img = LinearImage::from_fn(16, 16, 3, |x, y, c| (x + 2 * y + c) as f64 * 0.01);
        let zero = FlowField::zeros(16, 16);
        assert!(
            simulate_motion_blur(&img, &zero, 1.0)
                .unwrap()
                .max_abs_diff(&img)
                .unwrap()
                < 1e-15
        );
        let flow = FlowField::uniform(16, 16, 3.0, -2.0);
        let tiny = simulate_motion_blur(&img, &flow, 1e-9).unwrap();
        assert!(tiny.max_abs_diff(&img).unwrap() < 1e-6);
        assert!(simulate_motion_blur(&img, &flow, 0.0).is_err());
        assert!(simulate_motion_blur(&img, &flow, 1.5).is_err());
    }

    #[test]
    fn motion_blur_preserves_energy() {
        let img = LinearImage::from_fn(64, 64, 1, |x, y, _| {
            let (dx, dy) = (x as f64 - 32.0, y as f64 - 32.0);
            (-(dx * dx + dy * dy) / 40.0).exp()
        });
        let flow = FlowField::uniform(64, 64, 7.0, 3.0);
        let out = simulate_motion_blur(&img, &flow, 1.0).unwrap();
        let e0: f64 = img.data().iter().sum();
        let e1: f64 = out.data().iter().sum();
        assert!((e1 / e0 - 1.0).abs() < 5e-3);
    }
}
