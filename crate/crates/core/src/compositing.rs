//! The over operator on premultiplied elements: `C = αF + (1 − α)B`, with
//! either one alpha for all channels or a separate alpha per channel.

use crate::error::{Error, Result};
use crate::image::LinearImage;
use crate::matting::{ForegroundElement, MatteFrame, MatteSource};

/// Per-channel transparency in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ColorMatte {
    alpha_rgb: LinearImage,
}

impl ColorMatte {
    /// Wraps a 3-channel alpha, clamping to `[0, 1]`.
    pub fn new(alpha_rgb: LinearImage) -> Result<Self> {
        alpha_rgb.check_channels(3, "colour matte")?;
        Ok(Self {
            alpha_rgb: alpha_rgb.map(|a| a.clamp(0.0, 1.0)),
        })
    }

    /// Broadcasts a scalar alpha to all three channels.
    pub fn from_alpha(alpha: &LinearImage) -> Result<Self> {
        alpha.check_channels(1, "alpha")?;
        Self::new(LinearImage::from_channels(&[alpha, alpha, alpha])?)
    }

    pub fn alpha_rgb(&self) -> &LinearImage {
        &self.alpha_rgb
    }

    pub fn channel(&self, c: usize) -> LinearImage {
        self.alpha_rgb.channel(c)
    }

    pub fn holdout_rgb(&self) -> LinearImage {
        self.alpha_rgb.map(|a| 1.0 - a)
    }

    /// True when all channels agree within `tol` at every pixel.
    pub fn is_neutral(&self, tol: f64) -> bool {
        self.alpha_rgb
            .pixels()
            .all(|p| (p[0] - p[1]).abs() <= tol && (p[1] - p[2]).abs() <= tol)
    }

    /// The equivalent scalar matte, if the channels agree within `tol`.
    pub fn to_matte_frame(&self, tol: f64) -> Option<MatteFrame> {
        if !self.is_neutral(tol) {
            return None;
        }
        MatteFrame::new(self.alpha_rgb.channel(1), MatteSource::Truth).ok()
    }

    /// Per-pixel mean of the three channels.
    pub fn mean_alpha(&self) -> LinearImage {
        let (w, h) = self.alpha_rgb.dims();
        let data = self
            .alpha_rgb
            .pixels()
            .map(|p| (p[0] + p[1] + p[2]) / 3.0)
            .collect();
        LinearImage::from_vec(w, h, 1, data).expect("sized from matte")
    }
}

/// `premult + (1 − α)·B` per channel.
pub fn over(elem: &ForegroundElement, background: &LinearImage) -> Result<LinearImage> {
    over_premultiplied(elem.rgb(), elem.alpha(), background)
}

/// [`over`] on raw buffers: 3-channel premultiplied colour and 1-channel alpha.
pub fn over_premultiplied(
    premult: &LinearImage,
    alpha: &LinearImage,
    background: &LinearImage,
) -> Result<LinearImage> {
    premult.check_channels(3, "element colour")?;
    alpha.check_channels(1, "alpha")?;
    premult.check_shape(background, "element vs background")?;
    premult.check_dims(alpha, "element vs alpha")?;
    let mut out = premult.clone();
    for ((o, b), &a) in out.pixels_mut().zip(background.pixels()).zip(alpha.data()) {
        for (v, bv) in o.iter_mut().zip(b) {
            *v += (1.0 - a) * bv;
        }
    }
    Ok(out)
}

/// `premult_c + (1 − α_c)·B_c` with a separate alpha per channel.
pub fn over_color_matte(
    premult_rgb: &LinearImage,
    matte: &ColorMatte,
    background: &LinearImage,
) -> Result<LinearImage> {
    premult_rgb.check_channels(3, "element colour")?;
    premult_rgb.check_shape(background, "element vs background")?;
    premult_rgb.check_shape(&matte.alpha_rgb, "element vs colour matte")?;
    let mut out = premult_rgb.clone();
    for ((o, b), a) in out
        .pixels_mut()
        .zip(background.pixels())
        .zip(matte.alpha_rgb.pixels())
    {
        for c in 0..3 {
            o[c] += (1.0 - a[c]) * b[c];
        }
    }
    Ok(out)
}

fn alpha_for(rgb: &LinearImage, alpha: &LinearImage) -> Result<()> {
    rgb.check_dims(alpha, "colour vs alpha")?;
    if alpha.channels() != 1 && alpha.channels() != rgb.channels() {
        return Err(Error::structural(format!(
            "alpha has {} channels, colour has {}",
            alpha.channels(),
            rgb.channels()
        )));
    }
    Ok(())
}

#[inline]
fn alpha_at(alpha: &LinearImage, i: usize, c: usize) -> f64 {
    if alpha.channels() == 1 {
        alpha.data()[i]
    } else {
        alpha.data()[i * alpha.channels() + c]
    }
}

/// Multiplies each colour channel by alpha (scalar or per-channel).
pub fn premultiply(rgb: &LinearImage, alpha: &LinearImage) -> Result<LinearImage> {
    alpha_for(rgb, alpha)?;
    let mut out = rgb.clone();
    for (i, px) in out.pixels_mut().enumerate() {
        for (c, v) in px.iter_mut().enumerate() {
            *v *= alpha_at(alpha, i, c);
        }
    }
    Ok(out)
}

/// Divides by alpha where `α ≥ eps`; zero elsewhere.
pub fn unpremultiply(premult: &LinearImage, alpha: &LinearImage, eps: f64) -> Result<LinearImage> {
    if !(eps > 0.0) {
        return Err(Error::Parameter(format!("eps must be positive, got {eps}")));
    }
    alpha_for(premult, alpha)?;
    let mut out = premult.clone();
    for (i, px) in out.pixels_mut().enumerate() {
        for (c, v) in px.iter_mut().enumerate() {
            let a = alpha_at(alpha, i, c);
            *v = if a >= eps { *v / a } else { 0.0 };
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matting::ColorizationState;
    use proptest::prelude::*;

    fn element(premult: [f64; 3], alpha: f64) -> ForegroundElement {
        ForegroundElement::new(
            LinearImage::uniform(2, 2, &premult),
            LinearImage::filled(2, 2, 1, alpha),
            ColorizationState::Reference,
            None,
        )
        .unwrap()
    }

    #[test]
    fn opaque_and_transparent() {
        let bg = LinearImage::uniform(2, 2, &[0.1, 0.8, 0.1]);
        let opaque = element([0.5, 0.3, 0.2], 1.0);
        assert_eq!(over(&opaque, &bg).unwrap(), *opaque.rgb());
        let clear = element([0.0, 0.0, 0.0], 0.0);
        assert_eq!(over(&clear, &bg).unwrap(), bg);
    }

    #[test]
    fn partial_alpha_matches_hand_evaluation() {
        let e = element([0.15, 0.0, 0.06], 0.3);
        let out = over(&e, &LinearImage::uniform(2, 2, &[0.1, 0.8, 0.1])).unwrap();
        for (a, b) in out.pixel(0, 0).iter().zip([0.22, 0.56, 0.13]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn colour_matte_cases() {
        let bg = LinearImage::uniform(1, 1, &[0.5, 0.5, 0.5]);
        let premult = LinearImage::uniform(1, 1, &[0.3, 0.02, 0.02]);
        let ones = ColorMatte::new(LinearImage::uniform(1, 1, &[1.0, 1.0, 1.0])).unwrap();
        assert_eq!(over_color_matte(&premult, &ones, &bg).unwrap(), premult);
        let zeros = ColorMatte::new(LinearImage::zeros(1, 1, 3)).unwrap();
        let p0 = LinearImage::zeros(1, 1, 3);
        assert_eq!(over_color_matte(&p0, &zeros, &bg).unwrap(), bg);
        let bottle = ColorMatte::new(LinearImage::uniform(1, 1, &[0.2, 0.9, 0.9])).unwrap();
        let out = over_color_matte(&premult, &bottle, &bg).unwrap();
        for (a, b) in out.pixel(0, 0).iter().zip([0.70, 0.07, 0.07]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let e = element([0.1, 0.1, 0.1], 0.5);
        assert!(matches!(
            over(&e, &LinearImage::zeros(3, 2, 3)),
            Err(Error::Structural(_))
        ));
        let m = ColorMatte::new(LinearImage::zeros(2, 2, 3)).unwrap();
        assert!(over_color_matte(e.rgb(), &m, &LinearImage::zeros(2, 3, 3)).is_err());
    }

    #[test]
    fn premultiply_arithmetic_and_zero_alpha() {
        let rgb = LinearImage::uniform(1, 2, &[0.4, 0.4, 0.4]);
        let alpha = LinearImage::from_vec(1, 2, 1, vec![0.5, 0.0]).unwrap();
        let p = premultiply(&rgb, &alpha).unwrap();
        assert_eq!(p.pixel(0, 0), &[0.2, 0.2, 0.2]);
        assert_eq!(p.pixel(0, 1), &[0.0, 0.0, 0.0]);
        let u = unpremultiply(&p, &alpha, 1e-3).unwrap();
        assert_eq!(u.pixel(0, 1), &[0.0, 0.0, 0.0]);
        assert!(unpremultiply(&p, &alpha, 0.0).is_err());
    }

    #[test]
    fn colour_matte_collapses_when_neutral() {
        let a = LinearImage::from_fn(3, 2, 1, |x, y, _| (x + y) as f64 / 4.0);
        let cm = ColorMatte::from_alpha(&a).unwrap();
        assert!(cm.is_neutral(0.0));
        assert_eq!(cm.to_matte_frame(0.0).unwrap().alpha(), &a);
        let tinted = ColorMatte::new(LinearImage::uniform(1, 1, &[0.2, 0.9, 0.9])).unwrap();
        assert!(tinted.to_matte_frame(1e-6).is_none());
    }

    proptest! {
        #[test]
        fn premultiply_inverse_pair(v in prop::array::uniform3(0.0f64..4.0), a in 1e-3f64..1.0) {
            let rgb = LinearImage::uniform(1, 1, &v);
            let alpha = LinearImage::filled(1, 1, 1, a);
            let back = unpremultiply(&premultiply(&rgb, &alpha).unwrap(), &alpha, 1e-3).unwrap();
            prop_assert!(back.max_abs_diff(&rgb).unwrap() < 1e-6);
        }

        #[test]
        fn over_is_affine_in_background(
            p in prop::array::uniform3(0.0f64..1.0), a in 0.0f64..1.0, t in 0.0f64..1.0,
            b1 in prop::array::uniform3(0.0f64..2.0), b2 in prop::array::uniform3(0.0f64..2.0),
        ) {
            let e = element(p.map(|v| v * a), a);
            let bg1 = LinearImage::uniform(2, 2, &b1);
            let bg2 = LinearImage::uniform(2, 2, &b2);
            let mix = bg1.zip_map(&bg2, |x, y| t * x + (1.0 - t) * y).unwrap();
            let lhs = over(&e, &mix).unwrap();
            let rhs = over(&e, &bg1).unwrap().zip_map(&over(&e, &bg2).unwrap(), |x, y| t * x + (1.0 - t) * y).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-6);
        }

        #[test]
        fn neutral_colour_matte_equals_scalar_over(
            p in prop::array::uniform3(0.0f64..1.0), a in 0.0f64..1.0,
            b in prop::array::uniform3(0.0f64..2.0),
        ) {
            let e = element(p.map(|v| v * a), a);
            let bg = LinearImage::uniform(2, 2, &b);
            let cm = ColorMatte::from_alpha(e.alpha()).unwrap();
            let scalar = over(&e, &bg).unwrap();
            let coloured = over_color_matte(e.rgb(), &cm, &bg).unwrap();
            prop_assert!(scalar.max_abs_diff(&coloured).unwrap() < 1e-9);
        }
    }
}
