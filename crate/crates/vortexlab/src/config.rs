//! JSON run configuration.

use crate::develop::Mode;
use crate::grid::GridDomain;
use crate::holo::EntireFunction;
use crate::solver::Tolerances;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// `φ = P·e^Q`, coefficients ascending as `[re, im]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhiConfig {
    pub p: Vec<[f64; 2]>,
    #[serde(default)]
    pub q: Vec<[f64; 2]>,
}

impl PhiConfig {
    pub fn to_function(&self) -> Result<EntireFunction, ConfigError> {
        let c = |v: &[[f64; 2]]| v.iter().map(|&[re, im]| Complex64::new(re, im)).collect::<Vec<_>>();
        EntireFunction::new(c(&self.p), c(&self.q)).map_err(|e| ConfigError::Invalid(format!("phi: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    SolveComplete,
    SolveIncomplete,
    TwoSolutions,
    Verify,
    Develop,
    Export,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::SolveComplete => "solve-complete",
            Stage::SolveIncomplete => "solve-incomplete",
            Stage::TwoSolutions => "two-solutions",
            Stage::Verify => "verify",
            Stage::Develop => "develop",
            Stage::Export => "export",
        }
    }
}

fn default_rays() -> Vec<f64> {
    vec![0.0, 0.5 * PI, PI, 1.5 * PI]
}

/// In the geometric modes `phi` is the differential (`U` or `q`), not the base `φ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub phi: PhiConfig,
    pub k: u32,
    #[serde(rename = "R", alias = "r")]
    pub half_width: f64,
    pub n: usize,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(alias = "stages")]
    pub pipeline: Vec<Stage>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Ray directions (radians) for the completeness probe.
    #[serde(default = "default_rays")]
    pub rays: Vec<f64>,
}

fn default_mode() -> Mode {
    Mode::Eq1
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config; a relative `output_dir` is taken from the file's directory.
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let mut cfg = Self::from_json(&text)?;
        if cfg.output_dir.is_relative() {
            if let Some(parent) = path.parent() {
                cfg.output_dir = parent.join(&cfg.output_dir);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.n < 3 || self.n.is_multiple_of(2) {
            return bad(format!("n must be odd and at least 3, got {}", self.n));
        }
        if self.k < 2 {
            return bad(format!("k must be at least 2, got {}", self.k));
        }
        if !(self.half_width.is_finite() && self.half_width > 0.0) {
            return bad(format!("R must be positive, got {}", self.half_width));
        }
        if let Some(k) = self.mode.required_k() {
            if k != self.k {
                return bad(format!("mode {:?} requires k = {k}, got {}", self.mode, self.k));
            }
        }
        if self.pipeline.is_empty() {
            return bad("pipeline is empty".into());
        }
        if self.rays.iter().any(|t| !t.is_finite()) {
            return bad("ray angles must be finite".into());
        }
        self.phi.to_function()?;
        self.domain()?;
        Ok(())
    }

    pub fn domain(&self) -> Result<GridDomain, ConfigError> {
        GridDomain::new(self.half_width, self.n).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// The configured function: `φ` in EQ1 mode, the differential otherwise.
    pub fn differential(&self) -> Result<EntireFunction, ConfigError> {
        self.phi.to_function()
    }

    /// `φ` of the equation actually solved.
    pub fn base_phi(&self) -> Result<EntireFunction, ConfigError> {
        Ok(self.mode.base_phi(&self.differential()?))
    }
}
