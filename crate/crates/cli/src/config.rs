//! The pipeline config file: defaults for every command, overridden by flags.

use std::fs;
use std::path::{Path, PathBuf};

use mgs_core::calibration::DEFAULT_MAX_CONDITION;
use mgs_core::flow::FlowConfig;
use mgs_core::image::io::FramePattern;
use mgs_core::image::Transfer;
use mgs_core::matting::{BounceOrder, MatteChannel, DEFAULT_EPS_ALPHA};
use mgs_core::multiplex::LightingSchedule;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Gamma used for colorizer interchange files.
pub const DEFAULT_TONEMAP_GAMMA: f64 = 2.2;

/// Input and output locations a command falls back to.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Frame pattern of the main input sequence.
    pub input: Option<String>,
    pub calibration: Option<PathBuf>,
    /// Clean plate still.
    pub plate: Option<PathBuf>,
    /// Bounce plate still or frame pattern.
    pub bounce_plate: Option<String>,
    /// Output directory.
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub matte_channel: MatteChannel,
    /// Red weight of naive colorization, in `[0, 1]`.
    pub rho: f64,
    pub eps_alpha: f64,
    pub bounce_order: BounceOrder,
    /// Largest accepted condition number of the crosstalk matrix.
    pub max_condition: f64,
    /// Seed for random choices; a command's own default when absent.
    pub seed: Option<u64>,
    /// Exponent of the colorizer tone curve.
    pub tonemap_gamma: f64,
    /// Overrides the transfer recorded in input sidecars, e.g. `gamma(2.2)`.
    pub input_transfer: Option<String>,
    /// Transfer applied to composite outputs.
    pub output_transfer: String,
    /// Training crop side; defaults to `min(512, frame size)`.
    pub crop: Option<usize>,
    pub paths: Paths,
    pub schedule: Option<LightingSchedule>,
    pub flow: FlowConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            matte_channel: MatteChannel::Green,
            rho: 0.5,
            eps_alpha: DEFAULT_EPS_ALPHA,
            bounce_order: BounceOrder::AfterAlpha,
            max_condition: DEFAULT_MAX_CONDITION,
            seed: None,
            tonemap_gamma: DEFAULT_TONEMAP_GAMMA,
            input_transfer: None,
            output_transfer: "linear".into(),
            crop: None,
            paths: Paths::default(),
            schedule: None,
            flow: FlowConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> Result<String, String> {
        toml::to_string(self).map_err(|e| e.to_string())
    }

    /// Reads and validates a config file.
    pub fn load(path: &Path) -> CliResult<Self> {
        if !path.exists() {
            return Err(CliError::missing("config file", path));
        }
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg = Self::from_toml(&text).map_err(|message| CliError::Config {
            path: path.to_path_buf(),
            message,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let text = self.to_toml().map_err(|m| CliError::invalid("config", m))?;
        fs::write(path, text).map_err(|e| CliError::io(path, e))
    }

    /// Numeric ranges, transfer names, and existence of every input path.
    pub fn validate(&self) -> CliResult<()> {
        self.validate_values()?;
        let p = &self.paths;
        if let Some(c) = &p.calibration {
            require_file("calibration sidecar", c)?;
        }
        if let Some(c) = &p.plate {
            require_file("clean plate", c)?;
        }
        if let Some(b) = &p.bounce_plate {
            require_input("bounce plate", b)?;
        }
        if let Some(i) = &p.input {
            require_input("input sequence", i)?;
        }
        Ok(())
    }

    /// [`validate`](Self::validate) without touching the file system.
    pub fn validate_values(&self) -> CliResult<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(CliError::invalid(
                "rho",
                format!("{} is outside [0, 1]", self.rho),
            ));
        }
        if !(self.eps_alpha > 0.0 && self.eps_alpha < 1.0) {
            return Err(CliError::invalid(
                "eps_alpha",
                format!("{} is outside (0, 1)", self.eps_alpha),
            ));
        }
        if self.max_condition.is_nan() || self.max_condition < 1.0 {
            return Err(CliError::invalid(
                "max_condition",
                format!("{} is below 1", self.max_condition),
            ));
        }
        if !(self.tonemap_gamma > 0.0 && self.tonemap_gamma.is_finite()) {
            return Err(CliError::invalid(
                "tonemap_gamma",
                format!("{} is not positive", self.tonemap_gamma),
            ));
        }
        if self.crop == Some(0) {
            return Err(CliError::invalid("crop", "must be at least 1 pixel"));
        }
        self.input_transfer()?;
        self.output_transfer()?;
        if let Some(s) = &self.schedule {
            s.validate()?;
        }
        self.flow.validate()?;
        Ok(())
    }

    pub fn input_transfer(&self) -> CliResult<Option<Transfer>> {
        self.input_transfer
            .as_deref()
            .map(|t| t.parse().map_err(CliError::from))
            .transpose()
    }

    pub fn output_transfer(&self) -> CliResult<Transfer> {
        Ok(self.output_transfer.parse()?)
    }
}

/// Fails unless `path` is an existing file.
pub fn require_file(what: &str, path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::missing(what, path))
    }
}

/// A still must exist; a frame pattern must match at least one file.
pub fn require_input(what: &str, spec: &str) -> CliResult<()> {
    let pat = FramePattern::parse(spec)?;
    if !pat.is_numbered() {
        return require_file(what, Path::new(spec));
    }
    let sidecar = pat.sidecar_path();
    if sidecar.is_file() || !pat.discover()?.is_empty() {
        Ok(())
    } else {
        Err(CliError::missing(what, spec))
    }
}
