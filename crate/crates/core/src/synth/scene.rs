use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::{condition_number, DEFAULT_MAX_CONDITION};
use crate::error::{Error, Result};
use crate::multiplex::Condition;

/// Analytic coverage profile of a layer, centred on its position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case")]
pub enum Shape {
    Disk {
        radius: f64,
    },
    Rect {
        width: f64,
        height: f64,
    },
    /// Gaussian falloff; coverage `exp(−r²/2σ²)`.
    Blob {
        sigma: f64,
    },
    /// A thin segment through the centre.
    Strand {
        length: f64,
        thickness: f64,
        #[serde(default)]
        angle_degrees: f64,
    },
}

impl Shape {
    /// Coverage in `[0, 1]` at offset `(dx, dy)` from the centre.
    pub fn coverage(&self, dx: f64, dy: f64) -> f64 {
        match *self {
            Shape::Disk { radius } => f64::from(dx * dx + dy * dy <= radius * radius),
            Shape::Rect { width, height } => {
                f64::from(dx.abs() <= 0.5 * width && dy.abs() <= 0.5 * height)
            }
            Shape::Blob { sigma } => (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp(),
            Shape::Strand {
                length,
                thickness,
                angle_degrees,
            } => {
                let (s, c) = angle_degrees.to_radians().sin_cos();
                let along = dx * c + dy * s;
                let across = -dx * s + dy * c;
                let t = along.clamp(-0.5 * length, 0.5 * length);
                let d = (along - t).hypot(across);
                f64::from(d <= 0.5 * thickness)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Shape::Disk { radius } => radius > 0.0,
            Shape::Rect { width, height } => width > 0.0 && height > 0.0,
            Shape::Blob { sigma } => sigma > 0.0,
            Shape::Strand {
                length, thickness, ..
            } => length >= 0.0 && thickness > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Scene(format!(
                "shape has non-positive extent: {self:?}"
            )))
        }
    }
}

fn opaque() -> f64 {
    1.0
}

/// One sprite on a straight motion path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    #[serde(flatten)]
    pub shape: Shape,
    /// Position at time 0, pixels.
    pub position: [f64; 2],
    /// Pixels per scene frame.
    #[serde(default)]
    pub velocity: [f64; 2],
    pub reflectance: [f64; 3],
    #[serde(default = "opaque")]
    pub opacity: f64,
    /// Fraction of background light passed per channel; non-zero values make
    /// coloured transparency.
    #[serde(default)]
    pub transmission: [f64; 3],
}

impl Layer {
    pub fn new(shape: Shape, position: [f64; 2], reflectance: [f64; 3]) -> Self {
        Self {
            shape,
            position,
            velocity: [0.0, 0.0],
            reflectance,
            opacity: 1.0,
            transmission: [0.0; 3],
        }
    }

    pub fn moving(mut self, velocity: [f64; 2]) -> Self {
        self.velocity = velocity;
        self
    }

    pub fn with_opacity(mut self, opacity: f64) -> Self {
        self.opacity = opacity;
        self
    }

    pub fn with_transmission(mut self, transmission: [f64; 3]) -> Self {
        self.transmission = transmission;
        self
    }

    pub fn position_at(&self, t: f64) -> [f64; 2] {
        [
            self.position[0] + self.velocity[0] * t,
            self.position[1] + self.velocity[1] * t,
        ]
    }

    /// Per-channel alpha at `(x, y)` and time `t`.
    #[inline]
    pub fn alpha_at(&self, x: f64, y: f64, t: f64) -> [f64; 3] {
        let [px, py] = self.position_at(t);
        let cov = self.shape.coverage(x - px, y - py) * self.opacity;
        [
            cov * (1.0 - self.transmission[0]),
            cov * (1.0 - self.transmission[1]),
            cov * (1.0 - self.transmission[2]),
        ]
    }

    fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        let finite = self
            .position
            .iter()
            .chain(&self.velocity)
            .chain(&self.reflectance)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Scene("layer has non-finite parameters".into()));
        }
        if self.reflectance.iter().any(|&r| r < 0.0) {
            return Err(Error::Scene(
                "layer reflectance must be non-negative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(Error::Scene(format!(
                "opacity {} outside [0, 1]",
                self.opacity
            )));
        }
        if self.transmission.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::Scene("transmission outside [0, 1]".into()));
        }
        Ok(())
    }
}

/// Light on the subject (`gain`, multiplying reflectance) and light emitted
/// by the background panels, for one condition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lighting {
    pub gain: [f64; 3],
    pub emission: [f64; 3],
}

impl Lighting {
    pub fn default_for(condition: Condition) -> Lighting {
        let (gain, emission) = match condition {
            Condition::MagentaGreen => ([1.0, 0.0, 1.0], [0.0, 1.0, 0.0]),
            Condition::GreenMagenta => ([0.0, 1.0, 0.0], [1.0, 0.0, 1.0]),
            Condition::YellowBlue => ([1.0, 1.0, 0.0], [0.0, 0.0, 1.0]),
            Condition::WhiteLitBlack => ([1.0; 3], [0.0; 3]),
            Condition::SilhouetteWhite => ([0.0; 3], [1.0; 3]),
            Condition::BackgroundGreen => ([1.0; 3], [0.0, 1.0, 0.0]),
            Condition::BackgroundBlue => ([1.0; 3], [0.0, 0.0, 1.0]),
            Condition::CleanPlate => ([0.0; 3], [0.0, 1.0, 0.0]),
            Condition::BouncePlate => ([1.0, 0.0, 1.0], [0.0; 3]),
        };
        Lighting { gain, emission }
    }
}

fn default_frames() -> usize {
    1
}

fn default_rate() -> f64 {
    24.0
}

fn identity() -> [[f64; 3]; 3] {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

/// A synthetic stage: layers listed back to front.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageScene {
    pub width: usize,
    pub height: usize,
    #[serde(default = "default_frames")]
    pub frames: usize,
    #[serde(default = "default_rate")]
    pub camera_rate: f64,
    /// Bounce light as a fraction of the mean lit foreground flux.
    #[serde(default)]
    pub bounce_fraction: f64,
    /// Camera crosstalk `W`, row-major; column `j` is the response to LED `j`.
    #[serde(default = "identity")]
    pub crosstalk: [[f64; 3]; 3],
    /// Standard deviation of additive Gaussian noise on captures.
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
    /// Radial darkening of the screen toward the corners, in `[0, 1)`.
    #[serde(default)]
    pub screen_falloff: f64,
    /// Overrides of the default lighting per condition.
    #[serde(default)]
    pub lighting: BTreeMap<Condition, Lighting>,
    #[serde(default)]
    pub layers: Vec<Layer>,
}

impl StageScene {
    /// An empty stage with defaults.
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            frames: 1,
            camera_rate: 24.0,
            bounce_fraction: 0.0,
            crosstalk: identity(),
            noise_sigma: 0.0,
            seed: 0,
            screen_falloff: 0.0,
            lighting: BTreeMap::new(),
            layers: Vec::new(),
        }
    }

    pub fn with_layer(mut self, layer: Layer) -> Self {
        self.layers.push(layer);
        self
    }

    pub fn lighting(&self, condition: Condition) -> Lighting {
        self.lighting
            .get(&condition)
            .copied()
            .unwrap_or_else(|| Lighting::default_for(condition))
    }

    pub fn crosstalk_matrix(&self) -> Matrix3<f64> {
        let w = &self.crosstalk;
        Matrix3::new(
            w[0][0], w[0][1], w[0][2], w[1][0], w[1][1], w[1][2], w[2][0], w[2][1], w[2][2],
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Scene("scene has zero size".into()));
        }
        if self.frames == 0 {
            return Err(Error::Scene("scene needs at least one frame".into()));
        }
        if !(self.camera_rate > 0.0 && self.camera_rate.is_finite()) {
            return Err(Error::Scene(format!(
                "camera rate {} must be positive",
                self.camera_rate
            )));
        }
        if !(self.bounce_fraction >= 0.0 && self.bounce_fraction.is_finite()) {
            return Err(Error::Scene("bounce fraction must be non-negative".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Scene("noise sigma must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.screen_falloff) {
            return Err(Error::Scene("screen falloff must lie in [0, 1)".into()));
        }
        let cond = condition_number(&self.crosstalk_matrix());
        if !(cond <= DEFAULT_MAX_CONDITION) {
            return Err(Error::Scene(format!(
                "crosstalk matrix is ill-conditioned (condition number {cond:.3})"
            )));
        }
        for l in self.lighting.values() {
            if l.gain
                .iter()
                .chain(&l.emission)
                .any(|v| !(v.is_finite() && *v >= 0.0))
            {
                return Err(Error::Scene(
                    "lighting values must be finite and non-negative".into(),
                ));
            }
        }
        for layer in &self.layers {
            layer.validate()?;
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let scene: StageScene =
            toml::from_str(text).map_err(|e| Error::Scene(format!("scene description: {e}")))?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Scene(format!("scene description: {e}")))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }
}

/// A reproducible scene of one to four layers with mild crosstalk and
/// bounce (`β < 0.1`). Reflectances have no green, so a magenta-green key of
/// the scene is exact.
pub fn random_scene(seed: u64, width: usize, height: usize) -> StageScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as f64, height as f64);
    let scale = w.min(h);
    let mut crosstalk = identity();
    for (r, row) in crosstalk.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = if r == c {
                rng.random_range(0.8..0.95)
            } else {
                rng.random_range(0.0..0.12)
            };
        }
    }
    let n = rng.random_range(1..=4);
    let layers = (0..n)
        .map(|_| {
            let shape = match rng.random_range(0..4) {
                0 => Shape::Disk {
                    radius: rng.random_range(0.06..0.2) * scale,
                },
                1 => Shape::Rect {
                    width: rng.random_range(0.1..0.4) * scale,
                    height: rng.random_range(0.1..0.4) * scale,
                },
                2 => Shape::Blob {
                    sigma: rng.random_range(0.03..0.1) * scale,
                },
                _ => Shape::Strand {
                    length: rng.random_range(0.2..0.6) * scale,
                    thickness: rng.random_range(0.5..2.5),
                    angle_degrees: rng.random_range(0.0..180.0),
                },
            };
            let position = [
                rng.random_range(0.25..0.75) * w,
                rng.random_range(0.25..0.75) * h,
            ];
            let reflectance = [
                rng.random_range(0.05..0.95),
                0.0,
                rng.random_range(0.05..0.95),
            ];
            Layer::new(shape, position, reflectance)
                .moving([rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
                .with_opacity(rng.random_range(0.4..1.0))
        })
        .collect();
    StageScene {
        bounce_fraction: rng.random_range(0.0..0.1),
        crosstalk,
        seed,
        layers,
        ..StageScene::new(width, height)
    }
}
