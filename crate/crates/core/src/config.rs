//! Experiment configuration.
//!
//! A run is described by one TOML document with four sections:
//!
//! ```toml
//! [model]    # ModelParams keys
//! [noise]    # kernel keys plus the master seed
//! [run]      # per-command settings, one subtable per command
//! [output]   # output directory and formats
//! ```
//!
//! Every section and subtable rejects unknown keys. Missing sections and
//! keys take the defaults below, which reproduce `configs/default.toml`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ConfigError, NoiseError};
use crate::geometry::{BallOptions, ConeParams};
use crate::model::{ModelParams, Point};
use crate::noise::{DensityTable, KernelKind, NoiseKernel};

/// Starts with constant return iterates `(6, 11, 16)` under the default
/// model for `ε ∈ {0.005, 0.01}`.
pub const REGULAR_POINTS: [[f64; 3]; 3] = [
    [0.2 / 7.0, 1.0, 1.0],
    [0.4 / 7.0, 6.6 / 7.0, 7.4 / 7.0],
    [0.2 / 7.0, 6.2 / 7.0, 7.8 / 7.0],
];

/// Base point in `R` of the shipped return disk.
pub const DISK_BASE: [f64; 3] = [1.015, 0.042, 0.0016];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub kind: KernelKind,
    pub t0: f64,
    pub epsilon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub density: Option<DensityTable>,
    /// Master seed; every command derives its streams from it.
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { kind: KernelKind::Uniform, t0: 0.055, epsilon: 0.01, density: None, seed: 1 }
    }
}

impl NoiseConfig {
    pub fn kernel(&self) -> Result<NoiseKernel, NoiseError> {
        self.kernel_at(self.epsilon)
    }

    /// The configured kernel shape at another width.
    pub fn kernel_at(&self, epsilon: f64) -> Result<NoiseKernel, NoiseError> {
        match (self.kind, &self.density) {
            (KernelKind::Uniform, None) => NoiseKernel::uniform(self.t0, epsilon),
            (KernelKind::AbsContinuous, Some(d)) => NoiseKernel::abs_continuous(self.t0, epsilon, d.clone()),
            (KernelKind::Uniform, Some(_)) => {
                Err(NoiseError::InvalidKernel("uniform kernel takes no density table".into()))
            }
            (KernelKind::AbsContinuous, None) => {
                Err(NoiseError::InvalidKernel("abs_continuous kernel needs a density table".into()))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrbitRun {
    pub steps: usize,
}

impl Default for OrbitRun {
    fn default() -> Self {
        OrbitRun { steps: 1000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecurrenceRun {
    pub n_sequences: usize,
    pub horizon: usize,
    pub burn_in: usize,
}

impl Default for RecurrenceRun {
    fn default() -> Self {
        RecurrenceRun { n_sequences: 64, horizon: 100_000, burn_in: 1000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasuresRun {
    /// Cells per axis; consecutive entries are compared.
    pub resolutions: Vec<usize>,
    pub samples_per_cell: usize,
    /// Noise quadrature nodes for the stationarity residual.
    pub n_quadrature: usize,
    /// Also dump each operator as a coordinate list (large).
    pub write_operator: bool,
}

impl Default for MeasuresRun {
    fn default() -> Self {
        MeasuresRun { resolutions: vec![48, 96], samples_per_cell: 64, n_quadrature: 32, write_operator: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasinRun {
    pub resolution: usize,
    pub samples_per_cell: usize,
    pub n_sequences: usize,
    pub horizon: usize,
    /// Largest Birkhoff-to-mean distance that still counts as a match.
    pub threshold: f64,
}

impl Default for BasinRun {
    fn default() -> Self {
        BasinRun { resolution: 48, samples_per_cell: 64, n_sequences: 1000, horizon: 10_000, threshold: 0.25 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryRun {
    pub cone: ConeParams,
    pub n_samples: usize,
    pub disk_base: [f64; 3],
    /// Grid nodes per axis of the `(u, s)` square.
    pub disk_resolution: usize,
}

impl Default for GeometryRun {
    fn default() -> Self {
        GeometryRun { cone: ConeParams::default(), n_samples: 2000, disk_base: DISK_BASE, disk_resolution: 21 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BallRun {
    pub points: Vec<[f64; 3]>,
    pub epsilons: Vec<f64>,
    pub n_sequences: usize,
    pub options: BallOptions,
}

impl Default for BallRun {
    fn default() -> Self {
        BallRun {
            points: REGULAR_POINTS.to_vec(),
            epsilons: vec![0.005, 0.01],
            n_sequences: 8_000_000,
            options: BallOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Start point of `orbit`, `returns`, `recurrence` and `basin`.
    pub start: [f64; 3],
    pub orbit: OrbitRun,
    pub recurrence: RecurrenceRun,
    pub measures: MeasuresRun,
    pub basin: BasinRun,
    pub geometry: GeometryRun,
    pub ball: BallRun,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            start: REGULAR_POINTS[0],
            orbit: OrbitRun::default(),
            recurrence: RecurrenceRun::default(),
            measures: MeasuresRun::default(),
            basin: BasinRun::default(),
            geometry: GeometryRun::default(),
            ball: BallRun::default(),
        }
    }
}

impl RunConfig {
    pub fn start_point(&self) -> Point {
        Point::from_array(self.start)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("out"), formats: vec![Format::Json, Format::Csv] }
    }
}

impl OutputConfig {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Provenance<'a> {
    pub model: &'a ModelParams,
    pub noise: &'a NoiseConfig,
    pub run: &'a RunConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelParams,
    pub noise: NoiseConfig,
    pub run: RunConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    /// Canonical TOML of the resolved config (defaults filled in).
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    /// The `model`, `noise` and `run` sections: everything that can change
    /// a result. Output settings are left out so that moving the output
    /// directory does not change any emitted byte.
    pub fn provenance(&self) -> Provenance<'_> {
        Provenance { model: &self.model, noise: &self.noise, run: &self.run }
    }

    /// SHA-256 of the canonical TOML of [`provenance`](Self::provenance),
    /// hex encoded.
    pub fn hash(&self) -> String {
        let text = toml::to_string(&self.provenance()).expect("config always serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn seed(&self) -> u64 {
        self.noise.seed
    }
}
