//! Experiment configuration files.

use std::path::{Path, PathBuf};

use ou_levy_core::tvlab::BoundKind;
use ou_levy_core::{DiagonalModelF64, LevySpecF64, Rho0, SeedStream, VectorF64};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::tags;

/// Smallest replica count accepted for Monte Carlo runs.
pub const MIN_REPLICAS: usize = 1000;
/// Reference draws used to estimate `lambda_0` when it has no closed form.
pub const DEFAULT_CALIBRATION_BUDGET: usize = 1_000_000;

const GAUSSIAN52_SMALL: &str = include_str!("../../../presets/gaussian52-small.toml");
const Z3_EXPONENTIAL: &str = include_str!("../../../presets/z3-exponential.toml");

/// Names of the presets compiled into the binary.
pub const PRESETS: [&str; 2] = ["gaussian52-small", "z3-exponential"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelBlock,
    pub levy: LevyBlock,
    pub run: RunBlock,
    #[serde(default)]
    pub output: OutputBlock,
    #[serde(default)]
    pub bounds: Option<BoundsBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelBlock {
    Gaussian52 {
        n_modes: usize,
        delta: f64,
        d: f64,
    },
    WienerSurrogate {
        n_modes: usize,
    },
    Custom {
        q: Vec<f64>,
        lam: Vec<f64>,
        #[serde(default)]
        sigma: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevyBlock {
    pub rho0: Rho0<f64>,
    #[serde(default)]
    pub eta: f64,
    #[serde(default)]
    pub calibration_budget: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    pub seed: u64,
    #[serde(default)]
    pub replicas: Option<usize>,
    pub times: Vec<f64>,
    pub x: Point,
    pub y: Point,
}

/// A state vector given by coordinates or by name: `origin`, `e<k>` or
/// `-e<k>` (the `k`-th basis vector, counted from 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Point {
    Coords(Vec<f64>),
    Named(String),
}

impl Point {
    pub fn resolve(&self, n: usize) -> Result<VectorF64, CliError> {
        match self {
            Point::Coords(v) if v.len() == n => Ok(VectorF64::new(v.clone())),
            Point::Coords(v) => Err(CliError::usage(format!(
                "point has {} coordinates but the model has {n} modes",
                v.len()
            ))),
            Point::Named(name) => {
                if name == "origin" {
                    return Ok(VectorF64::zeros(n));
                }
                let (sign, rest) = match name.strip_prefix('-') {
                    Some(r) => (-1.0, r),
                    None => (1.0, name.as_str()),
                };
                let k: usize = rest
                    .strip_prefix('e')
                    .and_then(|k| k.parse().ok())
                    .ok_or_else(|| CliError::usage(format!("unknown point name `{name}`")))?;
                if k == 0 || k > n {
                    return Err(CliError::usage(format!("basis index in `{name}` must lie in 1..={n}")));
                }
                Ok(VectorF64::basis(n, k - 1).scale(sign))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            dir: None,
            formats: default_formats(),
        }
    }
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsBlock {
    pub kinds: Vec<BoundKind>,
    #[serde(default)]
    pub times: Option<Vec<f64>>,
    #[serde(default)]
    pub c: Option<f64>,
    #[serde(default)]
    pub lambda0: Option<f64>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub d: Option<f64>,
    #[serde(default)]
    pub ball_center: Option<Point>,
    #[serde(default)]
    pub ball_radius: Option<f64>,
    /// Monte Carlo budget per grid point of the numeric `delta_1`.
    #[serde(default)]
    pub delta_budget: Option<usize>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::usage(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }

    pub fn preset(name: &str) -> Result<Self, CliError> {
        let text = preset_text(name)?;
        Self::parse(text)
    }
}

pub fn preset_text(name: &str) -> Result<&'static str, CliError> {
    match name {
        "gaussian52-small" => Ok(GAUSSIAN52_SMALL),
        "z3-exponential" => Ok(Z3_EXPONENTIAL),
        _ => Err(CliError::usage(format!(
            "unknown preset `{name}` (available: {})",
            PRESETS.join(", ")
        ))),
    }
}

pub fn validate_replicas(replicas: usize) -> Result<usize, CliError> {
    if replicas < MIN_REPLICAS {
        return Err(CliError::usage(format!(
            "replicas must be at least {MIN_REPLICAS}, got {replicas}"
        )));
    }
    Ok(replicas)
}

/// Checks that a time grid is non-empty, finite and strictly increasing.
pub fn validate_times(times: &[f64], allow_zero: bool) -> Result<(), CliError> {
    if times.is_empty() {
        return Err(CliError::usage("time grid is empty"));
    }
    for &t in times {
        let ok = t.is_finite() && if allow_zero { t >= 0.0 } else { t > 0.0 };
        if !ok {
            return Err(CliError::usage(format!("invalid grid time {t}")));
        }
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CliError::usage("time grid must be strictly increasing"));
    }
    Ok(())
}

/// A configuration resolved into model objects, with command-line
/// overrides applied.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub model: DiagonalModelF64,
    pub spec: LevySpecF64,
    pub seed: u64,
    pub replicas: usize,
    pub x: VectorF64,
    pub y: VectorF64,
}

impl Experiment {
    pub fn new(config: ExperimentConfig, seed: Option<u64>, replicas: Option<usize>) -> Result<Self, CliError> {
        let seed = seed.unwrap_or(config.run.seed);
        let replicas = validate_replicas(replicas.or(config.run.replicas).unwrap_or(100_000))?;
        let model = build_model(&config.model)?;
        let n = model.n_modes();
        let x = config.run.x.resolve(n)?;
        let y = config.run.y.resolve(n)?;
        let budget = config.levy.calibration_budget.unwrap_or(DEFAULT_CALIBRATION_BUDGET);
        let stream = SeedStream::new(seed).substream(tags::CALIBRATION);
        let spec = LevySpecF64::calibrate(config.levy.rho0.clone(), config.levy.eta, &model, budget, stream)
            .map_err(CliError::usage_from)?;
        Ok(Self {
            config,
            model,
            spec,
            seed,
            replicas,
            x,
            y,
        })
    }

    pub fn master(&self) -> SeedStream {
        SeedStream::new(self.seed)
    }
}

pub fn build_model(block: &ModelBlock) -> Result<DiagonalModelF64, CliError> {
    match block {
        ModelBlock::Gaussian52 { n_modes, delta, d } => DiagonalModelF64::gaussian(*n_modes, *delta, *d),
        ModelBlock::WienerSurrogate { n_modes } => DiagonalModelF64::wiener_surrogate(*n_modes),
        ModelBlock::Custom { q, lam, sigma } => DiagonalModelF64::new(q.clone(), lam.clone(), sigma.clone()),
    }
    .map_err(CliError::usage_from)
}
