use std::fmt;
use std::str::FromStr;

use super::LinearImage;
use crate::error::{Error, Result};

/// Transfer curve applied at the file boundary.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum Transfer {
    #[default]
    Linear,
    /// Stored code values are `linear^(1/g)`.
    Gamma(f64),
}

impl Transfer {
    pub fn validate(self) -> Result<Self> {
        match self {
            Transfer::Gamma(g) if !(g > 0.0 && g.is_finite()) => {
                Err(Error::Parameter(format!("gamma must be positive, got {g}")))
            }
            t => Ok(t),
        }
    }

    /// Linear value to stored value.
    #[inline]
    pub fn encode(self, v: f64) -> f64 {
        match self {
            Transfer::Linear => v,
            Transfer::Gamma(g) => v.max(0.0).powf(1.0 / g),
        }
    }

    /// Stored value to linear value.
    #[inline]
    pub fn decode(self, v: f64) -> f64 {
        match self {
            Transfer::Linear => v,
            Transfer::Gamma(g) => v.max(0.0).powf(g),
        }
    }
}

impl fmt::Display for Transfer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transfer::Linear => write!(f, "linear"),
            Transfer::Gamma(g) => write!(f, "gamma({g})"),
        }
    }
}

impl FromStr for Transfer {
    type Err = Error;

    /// Accepts `linear`, `gamma(2.2)`, `gamma:2.2` and `gamma2.2`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("linear") {
            return Ok(Transfer::Linear);
        }
        let rest = s
            .strip_prefix("gamma")
            .ok_or_else(|| Error::Parameter(format!("unknown transfer '{s}'")))?;
        let rest = rest
            .trim_start_matches([':', '=', '('])
            .trim_end_matches(')');
        let g: f64 = rest
            .parse()
            .map_err(|_| Error::Parameter(format!("bad gamma in '{s}'")))?;
        Transfer::Gamma(g).validate()
    }
}

/// Display tone curve: negatives clamp to zero, then `v^(1/g)`.
pub fn tonemap(img: &LinearImage, g: f64) -> Result<LinearImage> {
    let t = Transfer::Gamma(g).validate()?;
    Ok(img.map(|v| t.encode(v)))
}

/// Inverse of [`tonemap`] on non-negative values.
pub fn inverse_tonemap(img: &LinearImage, g: f64) -> Result<LinearImage> {
    let t = Transfer::Gamma(g).validate()?;
    Ok(img.map(|v| t.decode(v)))
}
