//! Spectral keying.
//!
//! The subject is lit only by the two foreground channels while the screen
//! emits the matte channel, so the matte channel of a calibrated frame is
//! `C_m = (1 − α)·B_m`. That gives `α = (B_m − C_m) / B_m` directly and the
//! premultiplied lit channels as `α·F_c = C_c − (1 − α)·B_c`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{LinearImage, PixelMask};

/// Default threshold below which unpremultiplied colour is left undefined.
pub const DEFAULT_EPS_ALPHA: f64 = 1e-3;

/// Fraction of degenerate clean-plate pixels tolerated before keying fails.
pub const MAX_DEGENERATE_FRACTION: f64 = 1e-3;

/// The camera channel reserved for the background field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatteChannel {
    /// Cyan Red Screen.
    Red,
    /// Magenta Green Screen.
    Green,
    /// Yellow Blue Screen.
    Blue,
}

impl MatteChannel {
    pub fn index(self) -> usize {
        match self {
            MatteChannel::Red => 0,
            MatteChannel::Green => 1,
            MatteChannel::Blue => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(MatteChannel::Red),
            1 => Some(MatteChannel::Green),
            2 => Some(MatteChannel::Blue),
            _ => None,
        }
    }

    /// The two foreground-lit channels in R, G, B order.
    pub fn lit_channels(self) -> [usize; 2] {
        match self {
            MatteChannel::Red => [1, 2],
            MatteChannel::Green => [0, 2],
            MatteChannel::Blue => [0, 1],
        }
    }
}

impl fmt::Display for MatteChannel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatteChannel::Red => "R",
            MatteChannel::Green => "G",
            MatteChannel::Blue => "B",
        })
    }
}

impl FromStr for MatteChannel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "r" | "red" => Ok(MatteChannel::Red),
            "g" | "green" => Ok(MatteChannel::Green),
            "b" | "blue" => Ok(MatteChannel::Blue),
            _ => Err(Error::Parameter(format!("unknown matte channel '{s}'"))),
        }
    }
}

/// Reference level of the matte channel used as the divisor.
#[derive(Clone, Debug, PartialEq)]
pub enum BackgroundLevel {
    /// Per-pixel clean-plate values.
    PerPixel(LinearImage),
    /// A uniform screen.
    Scalar(f64),
}

impl BackgroundLevel {
    #[inline]
    fn at(&self, i: usize) -> f64 {
        match self {
            BackgroundLevel::PerPixel(img) => img.data()[i],
            BackgroundLevel::Scalar(v) => *v,
        }
    }
}

/// Where a matte came from.
#[derive(Clone, Debug, PartialEq)]
pub enum MatteSource {
    Spectral {
        channel: MatteChannel,
        background: BackgroundLevel,
    },
    Triangulation,
    Silhouette,
    Truth,
}

/// A single-channel alpha in `[0, 1]` with its provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct MatteFrame {
    alpha: LinearImage,
    source: MatteSource,
    raw_alpha: Option<LinearImage>,
}

impl MatteFrame {
    /// Wraps `alpha`, clamping it into `[0, 1]`.
    pub fn new(alpha: LinearImage, source: MatteSource) -> Result<Self> {
        alpha.check_channels(1, "matte")?;
        Ok(Self {
            alpha: alpha.map(|a| a.clamp(0.0, 1.0)),
            source,
            raw_alpha: None,
        })
    }

    pub fn alpha(&self) -> &LinearImage {
        &self.alpha
    }

    pub fn source(&self) -> &MatteSource {
        &self.source
    }

    /// Alpha before clamping, when requested at solve time.
    pub fn raw_alpha(&self) -> Option<&LinearImage> {
        self.raw_alpha.as_ref()
    }

    pub fn holdout(&self) -> LinearImage {
        self.alpha.map(|a| 1.0 - a)
    }

    pub fn into_alpha(self) -> LinearImage {
        self.alpha
    }
}

/// `1 − α` per pixel.
pub fn holdout_of(matte: &MatteFrame) -> LinearImage {
    matte.holdout()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColorizationState {
    /// The matte channel is identically zero.
    MissingChannel,
    Naive,
    Ml,
    /// Every channel was measured.
    Reference,
}

impl fmt::Display for ColorizationState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ColorizationState::MissingChannel => "missing-channel",
            ColorizationState::Naive => "naive",
            ColorizationState::Ml => "ml",
            ColorizationState::Reference => "reference",
        })
    }
}

impl FromStr for ColorizationState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "missing-channel" => Ok(ColorizationState::MissingChannel),
            "naive" => Ok(ColorizationState::Naive),
            "ml" => Ok(ColorizationState::Ml),
            "reference" => Ok(ColorizationState::Reference),
            _ => Err(Error::Parameter(format!(
                "unknown colorization state '{s}'"
            ))),
        }
    }
}

/// Premultiplied RGB plus alpha: the product of keying.
#[derive(Clone, Debug, PartialEq)]
pub struct ForegroundElement {
    rgb: LinearImage,
    alpha: LinearImage,
    state: ColorizationState,
    missing: Option<MatteChannel>,
}

impl ForegroundElement {
    /// `missing` names the absent channel and is required when `state` is
    /// [`ColorizationState::MissingChannel`]; that channel must be all zero.
    pub fn new(
        rgb: LinearImage,
        alpha: LinearImage,
        state: ColorizationState,
        missing: Option<MatteChannel>,
    ) -> Result<Self> {
        rgb.check_channels(3, "element colour")?;
        alpha.check_channels(1, "element alpha")?;
        rgb.check_dims(&alpha, "element colour vs alpha")?;
        if state == ColorizationState::MissingChannel {
            let mc = missing.ok_or_else(|| {
                Error::Contract("missing-channel element needs a matte channel".into())
            })?;
            if rgb.pixels().any(|px| px[mc.index()] != 0.0) {
                return Err(Error::Contract(format!(
                    "missing channel {mc} is not identically zero"
                )));
            }
        }
        Ok(Self {
            rgb,
            alpha,
            state,
            missing,
        })
    }

    /// Premultiplied colour.
    pub fn rgb(&self) -> &LinearImage {
        &self.rgb
    }

    pub fn alpha(&self) -> &LinearImage {
        &self.alpha
    }

    pub fn state(&self) -> ColorizationState {
        self.state
    }

    /// The channel that was (or still is) missing, if any.
    pub fn matte_channel(&self) -> Option<MatteChannel> {
        self.missing
    }

    pub fn dims(&self) -> (usize, usize) {
        self.rgb.dims()
    }

    /// Colour divided by alpha where `α ≥ eps`, zero elsewhere.
    pub fn unpremultiplied(&self, eps: f64) -> Result<LinearImage> {
        crate::compositing::unpremultiply(&self.rgb, &self.alpha, eps)
    }

    /// Fills the missing channel with `plane` (premultiplied, linear).
    pub fn with_restored_channel(
        &self,
        plane: &LinearImage,
        state: ColorizationState,
    ) -> Result<ForegroundElement> {
        if self.state != ColorizationState::MissingChannel {
            return Err(Error::Contract(format!(
                "element is already colorized ({})",
                self.state
            )));
        }
        if state == ColorizationState::MissingChannel {
            return Err(Error::Contract(
                "restored element cannot stay missing".into(),
            ));
        }
        let mc = self.missing.expect("checked at construction");
        let rgb = self.rgb.with_channel(mc.index(), plane)?;
        ForegroundElement::new(rgb, self.alpha.clone(), state, Some(mc))
    }
}

/// Lit background without the subject, plus the bounce light seen on the
/// unlit background panels.
#[derive(Clone, Debug, PartialEq)]
pub struct CleanPlate {
    pub background: LinearImage,
    pub bounce: Option<LinearImage>,
}

impl CleanPlate {
    pub fn new(background: LinearImage) -> Self {
        Self {
            background,
            bounce: None,
        }
    }

    pub fn with_bounce(background: LinearImage, bounce: LinearImage) -> Self {
        Self {
            background,
            bounce: Some(bounce),
        }
    }
}

/// When bounce light is removed relative to the alpha solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BounceOrder {
    /// Solve alpha on the raw frame, then subtract bounce under the holdout.
    #[default]
    AfterAlpha,
    /// Solve a provisional alpha, subtract bounce, then solve alpha again on
    /// the corrected frame.
    BeforeAlpha,
}

impl fmt::Display for BounceOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BounceOrder::AfterAlpha => "after-alpha",
            BounceOrder::BeforeAlpha => "before-alpha",
        })
    }
}

impl FromStr for BounceOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "after-alpha" | "after" => Ok(BounceOrder::AfterAlpha),
            "before-alpha" | "before" => Ok(BounceOrder::BeforeAlpha),
            _ => Err(Error::Parameter(format!("unknown bounce order '{s}'"))),
        }
    }
}

/// How the matte-channel divisor is taken from the clean plate.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum BackgroundMode {
    #[default]
    PerPixel,
    /// A uniform level; `None` uses the plate's mean matte-channel value.
    Scalar(Option<f64>),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatteOptions {
    pub eps_alpha: f64,
    pub background: BackgroundMode,
    pub bounce_order: BounceOrder,
    /// Keep the unclamped alpha for diagnostics.
    pub keep_raw_alpha: bool,
}

impl Default for MatteOptions {
    fn default() -> Self {
        Self {
            eps_alpha: DEFAULT_EPS_ALPHA,
            background: BackgroundMode::PerPixel,
            bounce_order: BounceOrder::AfterAlpha,
            keep_raw_alpha: false,
        }
    }
}

/// Pixels whose clean-plate matte channel is not strictly positive.
pub fn degenerate_plate_mask(plate: &CleanPlate, mc: MatteChannel) -> Result<PixelMask> {
    plate.background.check_channels(3, "clean plate")?;
    let (w, h) = plate.background.dims();
    let bits = plate
        .background
        .pixels()
        .map(|px| !(px[mc.index()] > 0.0))
        .collect();
    PixelMask::from_vec(w, h, bits)
}

fn background_level(
    plate: &CleanPlate,
    mc: MatteChannel,
    mode: BackgroundMode,
) -> Result<BackgroundLevel> {
    Ok(match mode {
        BackgroundMode::PerPixel => BackgroundLevel::PerPixel(plate.background.channel(mc.index())),
        BackgroundMode::Scalar(Some(v)) => {
            if !(v > 0.0) {
                return Err(Error::BackgroundLevel(format!(
                    "scalar background level must be positive, got {v}"
                )));
            }
            BackgroundLevel::Scalar(v)
        }
        BackgroundMode::Scalar(None) => {
            let v = plate.background.channel_means()[mc.index()];
            if !(v > 0.0) {
                return Err(Error::BackgroundLevel(format!(
                    "mean clean-plate {mc} level is {v}"
                )));
            }
            BackgroundLevel::Scalar(v)
        }
    })
}

/// Raw (unclamped) alpha; degenerate divisors yield `NaN`.
fn raw_alpha(frame: &LinearImage, level: &BackgroundLevel, mc: MatteChannel) -> LinearImage {
    let (w, h) = frame.dims();
    let data = frame
        .pixels()
        .enumerate()
        .map(|(i, px)| {
            let b = level.at(i);
            if b > 0.0 {
                (b - px[mc.index()]) / b
            } else {
                f64::NAN
            }
        })
        .collect();
    LinearImage::from_vec(w, h, 1, data).expect("sized from frame")
}

/// Clamped alpha; degenerate pixels are treated as opaque so the element
/// carries the observed colour there.
fn clamp_alpha(raw: &LinearImage) -> LinearImage {
    raw.map(|a| if a.is_nan() { 1.0 } else { a.clamp(0.0, 1.0) })
}

fn check_inputs(frame: &LinearImage, plate: &CleanPlate) -> Result<()> {
    frame.check_channels(3, "frame")?;
    frame.check_shape(&plate.background, "frame vs clean plate")?;
    if let Some(b) = &plate.bounce {
        frame.check_shape(b, "frame vs bounce plate")?;
    }
    Ok(())
}

/// Keys one calibrated frame against its clean plate.
///
/// Returns the matte and a premultiplied element whose matte channel is zero.
/// Fails if more than 0.1% of plate pixels have a non-positive matte channel;
/// use [`degenerate_plate_mask`] to locate them.
pub fn solve_matte(
    frame: &LinearImage,
    plate: &CleanPlate,
    mc: MatteChannel,
    opts: &MatteOptions,
) -> Result<(MatteFrame, ForegroundElement)> {
    check_inputs(frame, plate)?;
    if !(opts.eps_alpha > 0.0) {
        return Err(Error::Parameter(format!(
            "eps_alpha must be positive, got {}",
            opts.eps_alpha
        )));
    }
    let level = background_level(plate, mc, opts.background)?;
    if let BackgroundLevel::PerPixel(_) = level {
        let mask = degenerate_plate_mask(plate, mc)?;
        let affected = mask.count();
        let total = frame.pixel_count();
        if affected as f64 > MAX_DEGENERATE_FRACTION * total as f64 {
            return Err(Error::DegeneratePlate { affected, total });
        }
    }

    let mut raw = raw_alpha(frame, &level, mc);
    let mut alpha = clamp_alpha(&raw);
    let corrected = match (&plate.bounce, opts.bounce_order) {
        (None, _) => frame.clone(),
        (Some(bounce), BounceOrder::AfterAlpha) => remove_bounce(frame, bounce, &alpha)?,
        (Some(bounce), BounceOrder::BeforeAlpha) => {
            let provisional = remove_bounce(frame, bounce, &alpha)?;
            raw = raw_alpha(&provisional, &level, mc);
            alpha = clamp_alpha(&raw);
            remove_bounce(frame, bounce, &alpha)?
        }
    };

    let lit = mc.lit_channels();
    let mut rgb = LinearImage::zeros(frame.width(), frame.height(), 3);
    for (i, (out, (c, b))) in rgb
        .pixels_mut()
        .zip(corrected.pixels().zip(plate.background.pixels()))
        .enumerate()
    {
        let a = alpha.data()[i];
        if a == 0.0 {
            continue;
        }
        for &ch in &lit {
            out[ch] = c[ch] - (1.0 - a) * b[ch];
        }
    }

    let matte = MatteFrame {
        alpha: alpha.clone(),
        source: MatteSource::Spectral {
            channel: mc,
            background: level,
        },
        raw_alpha: opts.keep_raw_alpha.then_some(raw),
    };
    let element = ForegroundElement::new(rgb, alpha, ColorizationState::MissingChannel, Some(mc))?;
    Ok((matte, element))
}

fn remove_bounce(
    frame: &LinearImage,
    bounce: &LinearImage,
    alpha: &LinearImage,
) -> Result<LinearImage> {
    frame.check_shape(bounce, "frame vs bounce plate")?;
    frame.check_dims(alpha, "frame vs matte")?;
    let mut out = frame.clone();
    for ((px, b), &a) in out.pixels_mut().zip(bounce.pixels()).zip(alpha.data()) {
        let holdout = 1.0 - a;
        for (v, bv) in px.iter_mut().zip(b) {
            *v -= holdout * bv;
        }
    }
    Ok(out)
}

/// `frame − holdout·bounce` per channel. Negative results are kept. Without
/// a bounce plate the frame is returned unchanged.
pub fn subtract_bounce(
    frame: &LinearImage,
    plate: &CleanPlate,
    holdout: &MatteFrame,
) -> Result<LinearImage> {
    match &plate.bounce {
        None => {
            frame.check_dims(holdout.alpha(), "frame vs matte")?;
            Ok(frame.clone())
        }
        Some(bounce) => remove_bounce(frame, bounce, holdout.alpha()),
    }
}

/// Restores the missing channel as `ρ·first + (1 − ρ)·second`, the lit
/// channels taken in R, G, B order (for a green matte: `g = ρr + (1 − ρ)b`).
pub fn naive_colorize(elem: &ForegroundElement, rho: f64) -> Result<ForegroundElement> {
    if elem.state() != ColorizationState::MissingChannel {
        return Err(Error::Contract(format!(
            "naive colorization needs a missing-channel element, got {}",
            elem.state()
        )));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Parameter(format!(
            "rho must lie in [0, 1], got {rho}"
        )));
    }
    let mc = elem.matte_channel().expect("checked at construction");
    let [first, second] = mc.lit_channels();
    let mut rgb = elem.rgb().clone();
    for px in rgb.pixels_mut() {
        px[mc.index()] = rho * px[first] + (1.0 - rho) * px[second];
    }
    ForegroundElement::new(
        rgb,
        elem.alpha().clone(),
        ColorizationState::Naive,
        Some(mc),
    )
}
