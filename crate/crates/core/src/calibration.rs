//! Crosstalk removal.
//!
//! A neutral chart is photographed three times, lit by the red, green and blue
//! LED primaries alone. The mean camera RGB of the chart's white patch under
//! each primary forms one column of the measurement matrix `W`; its inverse
//! `M` maps camera RGB back to LED-primary amounts and is applied to every
//! frame before keying. Columns are deliberately not normalized, so relative
//! LED brightness carries through to the calibrated images.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::image::LinearImage;

/// Default ceiling on the 2-norm condition number of `W`.
pub const DEFAULT_MAX_CONDITION: f64 = 50.0;

const MIN_REGION_AREA: usize = 16;

/// Pixel rectangle locating the chart's white patch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChartRegion {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl ChartRegion {
    pub fn new(x: usize, y: usize, width: usize, height: usize) -> Result<Self> {
        let region = Self {
            x,
            y,
            width,
            height,
        };
        if region.area() < MIN_REGION_AREA {
            return Err(Error::Parameter(format!(
                "chart region covers {} pixels, need at least {MIN_REGION_AREA}",
                region.area()
            )));
        }
        Ok(region)
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    fn check_within(&self, img: &LinearImage) -> Result<()> {
        if self.area() < MIN_REGION_AREA {
            return Err(Error::Parameter(format!(
                "chart region covers {} pixels, need at least {MIN_REGION_AREA}",
                self.area()
            )));
        }
        if self.x + self.width > img.width() || self.y + self.height > img.height() {
            return Err(Error::structural(format!(
                "chart region {}x{}+{}+{} exceeds {}x{} image",
                self.width,
                self.height,
                self.x,
                self.y,
                img.width(),
                img.height()
            )));
        }
        Ok(())
    }
}

impl std::str::FromStr for ChartRegion {
    type Err = Error;

    /// `x,y,w,h`
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Parameter(format!("chart region '{s}' is not x,y,w,h")))?;
        match parts[..] {
            [x, y, w, h] => ChartRegion::new(x, y, w, h),
            _ => Err(Error::Parameter(format!(
                "chart region '{s}' is not x,y,w,h"
            ))),
        }
    }
}

/// Mean RGB over `region`.
pub fn measure_response(capture: &LinearImage, region: &ChartRegion) -> Result<[f64; 3]> {
    capture.check_channels(3, "chart capture")?;
    region.check_within(capture)?;
    let mut sum = [0.0; 3];
    for y in region.y..region.y + region.height {
        for x in region.x..region.x + region.width {
            for (s, v) in sum.iter_mut().zip(capture.pixel(x, y)) {
                *s += v;
            }
        }
    }
    let n = region.area() as f64;
    Ok(sum.map(|s| s / n))
}

/// The measured crosstalk `W` together with its inverse `M`.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationMatrix {
    measurement: Matrix3<f64>,
    correction: Matrix3<f64>,
    condition_number: f64,
}

/// 2-norm condition number `σ_max / σ_min`; infinite when singular.
pub fn condition_number(m: &Matrix3<f64>) -> f64 {
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

impl CalibrationMatrix {
    /// Builds the correction from a measurement matrix whose columns are the
    /// camera responses to the red, green and blue primaries.
    pub fn from_measurement(w: Matrix3<f64>, max_condition: f64) -> Result<Self> {
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Calibration {
                message: "measurement contains non-finite values".into(),
                condition: f64::NAN,
            });
        }
        let condition = condition_number(&w);
        if !condition.is_finite() {
            return Err(Error::Calibration {
                message: "measurement matrix is singular".into(),
                condition,
            });
        }
        if condition > max_condition {
            return Err(Error::Calibration {
                message: format!("measurement matrix exceeds condition limit {max_condition}"),
                condition,
            });
        }
        let m = w.try_inverse().ok_or(Error::Calibration {
            message: "measurement matrix is singular".into(),
            condition,
        })?;
        Ok(Self {
            measurement: w,
            correction: m,
            condition_number: condition,
        })
    }

    /// From the three responses, used as the columns of `W`.
    pub fn from_responses(responses: [[f64; 3]; 3], max_condition: f64) -> Result<Self> {
        let cols = responses.map(|r| Vector3::new(r[0], r[1], r[2]));
        Self::from_measurement(Matrix3::from_columns(&cols), max_condition)
    }

    pub fn identity() -> Self {
        Self {
            measurement: Matrix3::identity(),
            correction: Matrix3::identity(),
            condition_number: 1.0,
        }
    }

    /// `W`, camera response per LED primary (columns).
    pub fn measurement(&self) -> &Matrix3<f64> {
        &self.measurement
    }

    /// `M = W⁻¹`.
    pub fn correction(&self) -> &Matrix3<f64> {
        &self.correction
    }

    pub fn condition_number(&self) -> f64 {
        self.condition_number
    }

    /// Applies `M` to every pixel.
    pub fn apply(&self, img: &LinearImage) -> Result<LinearImage> {
        apply_matrix(img, &self.correction)
    }

    /// Applies `W` to every pixel, i.e. re-introduces the crosstalk.
    pub fn apply_crosstalk(&self, img: &LinearImage) -> Result<LinearImage> {
        apply_matrix(img, &self.measurement)
    }

    /// Sidecar text: nine numbers of `W` row-major, nine of `M`, then the
    /// condition number, one line each group.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for m in [&self.measurement, &self.correction] {
            let row: Vec<String> = (0..3)
                .flat_map(|r| (0..3).map(move |c| (r, c)))
                .map(|(r, c)| format!("{:?}", m[(r, c)]))
                .collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        let _ = writeln!(s, "{:?}", self.condition_number);
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let nums: Vec<f64> = text
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parameter(format!("calibration sidecar: {e}")))?;
        if nums.len() != 19 {
            return Err(Error::Parameter(format!(
                "calibration sidecar holds {} numbers, expected 19",
                nums.len()
            )));
        }
        let w = Matrix3::from_row_slice(&nums[0..9]);
        let m = Matrix3::from_row_slice(&nums[9..18]);
        let residual = (m * w - Matrix3::identity()).abs().max();
        if residual > 1e-9 {
            return Err(Error::Calibration {
                message: format!("sidecar M·W deviates from identity by {residual:.3e}"),
                condition: nums[18],
            });
        }
        Ok(Self {
            measurement: w,
            correction: m,
            condition_number: nums[18],
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// Builds `W` from chart shots under each primary and inverts it.
pub fn build_calibration(
    red_shot: &LinearImage,
    green_shot: &LinearImage,
    blue_shot: &LinearImage,
    region: &ChartRegion,
    max_condition: f64,
) -> Result<CalibrationMatrix> {
    let responses = [
        measure_response(red_shot, region)?,
        measure_response(green_shot, region)?,
        measure_response(blue_shot, region)?,
    ];
    CalibrationMatrix::from_responses(responses, max_condition)
}

/// Replaces each pixel `p` with `M·p`.
pub fn apply_calibration(img: &LinearImage, cal: &CalibrationMatrix) -> Result<LinearImage> {
    cal.apply(img)
}

fn apply_matrix(img: &LinearImage, m: &Matrix3<f64>) -> Result<LinearImage> {
    img.check_channels(3, "colour matrix")?;
    let mut out = img.clone();
    for px in out.pixels_mut() {
        let v = m * Vector3::new(px[0], px[1], px[2]);
        px.copy_from_slice(v.as_slice());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Inverse by adjugate over determinant, independent of nalgebra's LU.
    fn adjugate_inverse(a: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
        let cof = |r: usize, c: usize| {
            let rows: Vec<usize> = (0..3).filter(|&i| i != r).collect();
            let cols: Vec<usize> = (0..3).filter(|&j| j != c).collect();
            let minor = a[rows[0]][cols[0]] * a[rows[1]][cols[1]]
                - a[rows[0]][cols[1]] * a[rows[1]][cols[0]];
            if (r + c).is_multiple_of(2) {
                minor
            } else {
                -minor
            }
        };
        let det = a[0][0] * cof(0, 0) + a[0][1] * cof(0, 1) + a[0][2] * cof(0, 2);
        let mut inv = [[0.0; 3]; 3];
        for (r, row) in inv.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = cof(c, r) / det;
            }
        }
        inv
    }

    const W_EXAMPLE: [[f64; 3]; 3] = [[0.90, 0.10, 0.05], [0.08, 0.85, 0.10], [0.02, 0.10, 0.90]];

    fn w_example() -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| W_EXAMPLE[r][c])
    }

    fn chart_shot(response: [f64; 3]) -> LinearImage {
        LinearImage::from_fn(12, 10, 3, |x, y, c| {
            if (2..8).contains(&x) && (3..7).contains(&y) {
                response[c]
            } else {
                0.02
            }
        })
    }

    #[test]
    fn mean_of_constant_and_of_mixed_region() {
        let img = LinearImage::uniform(8, 8, &[0.2, 0.4, 0.1]);
        let region = ChartRegion::new(1, 1, 4, 4).unwrap();
        let m = measure_response(&img, &region).unwrap();
        for (a, b) in m.iter().zip([0.2, 0.4, 0.1]) {
            assert!((a - b).abs() < 1e-15);
        }
        // 2x2 block {0,0,0,1} tiled over a 4x4 region.
        let img = LinearImage::from_fn(4, 4, 3, |x, y, c| {
            if c == 0 && x % 2 == 1 && y % 2 == 1 {
                1.0
            } else {
                0.0
            }
        });
        let m = measure_response(&img, &ChartRegion::new(0, 0, 4, 4).unwrap()).unwrap();
        assert_eq!(m[0], 0.25);
    }

    #[test]
    fn region_validation() {
        assert!(ChartRegion::new(0, 0, 5, 3).is_err());
        let img = LinearImage::zeros(8, 8, 3);
        let r = ChartRegion::new(6, 6, 4, 4).unwrap();
        assert!(matches!(
            measure_response(&img, &r),
            Err(Error::Structural(_))
        ));
        assert_eq!(
            "1,2,4,5".parse::<ChartRegion>().unwrap(),
            ChartRegion::new(1, 2, 4, 5).unwrap()
        );
        assert!("1,2,3".parse::<ChartRegion>().is_err());
    }

    #[test]
    fn identity_responses_give_identity() {
        let cal = build_calibration(
            &chart_shot([1.0, 0.0, 0.0]),
            &chart_shot([0.0, 1.0, 0.0]),
            &chart_shot([0.0, 0.0, 1.0]),
            &ChartRegion::new(2, 3, 6, 4).unwrap(),
            DEFAULT_MAX_CONDITION,
        )
        .unwrap();
        assert_eq!(cal.correction(), &Matrix3::identity());
    }

    #[test]
    fn inverse_matches_adjugate_oracle() {
        let oracle = adjugate_inverse(&W_EXAMPLE);
        let cal = CalibrationMatrix::from_measurement(w_example(), DEFAULT_MAX_CONDITION).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                assert!((cal.correction()[(r, c)] - oracle[r][c]).abs() < 1e-12);
            }
        }
        let residual = (cal.correction() * cal.measurement() - Matrix3::identity())
            .abs()
            .max();
        assert!(residual < 1e-10);
    }

    #[test]
    fn chart_columns_recover_w() {
        let col = |c: usize| [W_EXAMPLE[0][c], W_EXAMPLE[1][c], W_EXAMPLE[2][c]];
        let cal = build_calibration(
            &chart_shot(col(0)),
            &chart_shot(col(1)),
            &chart_shot(col(2)),
            &ChartRegion::new(2, 3, 6, 4).unwrap(),
            DEFAULT_MAX_CONDITION,
        )
        .unwrap();
        assert!((cal.measurement() - w_example()).abs().max() < 1e-15);
    }

    #[test]
    fn singular_and_ill_conditioned_fail() {
        let err = CalibrationMatrix::from_responses(
            [[0.9, 0.1, 0.0], [0.9, 0.1, 0.0], [0.0, 0.0, 1.0]],
            DEFAULT_MAX_CONDITION,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Calibration { .. }));
        let near = CalibrationMatrix::from_responses(
            [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.01]],
            DEFAULT_MAX_CONDITION,
        );
        match near {
            Err(Error::Calibration { condition, .. }) => assert!((condition - 100.0).abs() < 1e-9),
            other => panic!("expected calibration error, got {other:?}"),
        }
        assert!(CalibrationMatrix::from_responses(
            [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.01]],
            200.0
        )
        .is_ok());
    }

    #[test]
    fn green_column_maps_to_unit_green() {
        let cal = CalibrationMatrix::from_measurement(w_example(), DEFAULT_MAX_CONDITION).unwrap();
        let img = LinearImage::uniform(2, 2, &[0.10, 0.85, 0.10]);
        let out = apply_calibration(&img, &cal).unwrap();
        for (a, b) in out.pixel(1, 1).iter().zip([0.0, 1.0, 0.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(apply_calibration(&LinearImage::zeros(2, 2, 1), &cal).is_err());
        let id = CalibrationMatrix::identity();
        assert_eq!(id.apply(&img).unwrap(), img);
    }

    #[test]
    fn sidecar_round_trip() {
        let cal = CalibrationMatrix::from_measurement(w_example(), DEFAULT_MAX_CONDITION).unwrap();
        let back = CalibrationMatrix::parse(&cal.to_text()).unwrap();
        assert_eq!(back, cal);
        assert!(CalibrationMatrix::parse("1 2 3").is_err());
    }

    fn well_conditioned() -> impl Strategy<Value = Matrix3<f64>> {
        prop::array::uniform9(-0.15f64..0.15).prop_map(|off| {
            Matrix3::from_fn(|r, c| {
                if r == c {
                    0.8 + off[r * 3 + c].abs()
                } else {
                    off[r * 3 + c].abs()
                }
            })
        })
    }

    proptest! {
        #[test]
        fn calibration_undoes_crosstalk(
            w in well_conditioned(),
            px in prop::array::uniform3(0.0f64..2.0),
        ) {
            let cal = CalibrationMatrix::from_measurement(w, DEFAULT_MAX_CONDITION).unwrap();
            let img = LinearImage::uniform(3, 2, &px);
            let crossed = cal.apply_crosstalk(&img).unwrap();
            let back = cal.apply(&crossed).unwrap();
            prop_assert!(back.max_abs_diff(&img).unwrap() < 1e-5);
            let again = cal.apply_crosstalk(&back).unwrap();
            prop_assert!(again.max_abs_diff(&crossed).unwrap() < 1e-6);
        }

        #[test]
        fn calibration_is_linear(
            a in -2.0f64..2.0, b in -2.0f64..2.0,
            x in prop::array::uniform3(0.0f64..1.0),
            y in prop::array::uniform3(0.0f64..1.0),
        ) {
            let cal = CalibrationMatrix::from_measurement(w_example(), DEFAULT_MAX_CONDITION).unwrap();
            let xi = LinearImage::uniform(1, 1, &x);
            let yi = LinearImage::uniform(1, 1, &y);
            let mix = xi.zip_map(&yi, |p, q| a * p + b * q).unwrap();
            let lhs = cal.apply(&mix).unwrap();
            let rhs = cal.apply(&xi).unwrap().zip_map(&cal.apply(&yi).unwrap(), |p, q| a * p + b * q).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-6);
        }
    }
}
