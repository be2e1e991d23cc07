//! Run configuration: TOML with one table per concern.
//!
//! ```toml
//! [plant]
//! kind = "b747"            # "b747" | "quad" | "matrices" (with a, b, optional c)
//!
//! [excitation]
//! kind = "chirp"           # "chirp" | "multisine" | "doublet"
//! amplitude = 1e-4
//! f0 = 1e-4
//! f1 = 7e-2
//!
//! [sampling]
//! rate_hz = 10.0
//! duration_s = 30.0
//!
//! [noise]
//! sigma = 1e-3
//! seed = 1
//!
//! [weights]
//! m = [10.0, 1.0, 1.0, 10.0]   # diagonal, or a full matrix as rows
//! r = [1.0]
//! ```
//!
//! Every omitted field has a default, and [`RunConfig::resolved_toml`] writes
//! the configuration with all defaults filled in. The hash of that text (with
//! the output directory left out) tags every artifact of a run.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use mflqr::synthesis::{Initialization, SolverOptions};
use mflqr::CostWeights;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub plant: PlantSpec,
    pub excitation: ExcitationSpec,
    pub sampling: SamplingSpec,
    #[serde(default)]
    pub noise: NoiseSpec,
    pub weights: WeightsSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub reference: ReferenceSpec,
    #[serde(default)]
    pub verify: VerifySpec,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlantSpec {
    /// Built-in 747 lateral model, full-state output.
    B747,
    /// Built-in X500 quadcopter; data come from the nonlinear model and
    /// synthesis targets the (φ, θ, p, q)/(τ_r, τ_p) attitude loop.
    Quad,
    /// User matrices given as rows; `c` defaults to the identity.
    Matrices {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        c: Option<Vec<Vec<f64>>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExcitationSpec {
    /// Linear chirp on one input channel over the whole record.
    Chirp {
        amplitude: f64,
        f0: f64,
        f1: f64,
        #[serde(default)]
        channel: usize,
    },
    /// Per-channel sums of cosines: `channels[i]` lists `[amplitude, hz]` pairs.
    Multisine { channels: Vec<Vec<[f64; 2]>> },
    /// Square-wave doublet on one channel.
    Doublet {
        amplitude: f64,
        period: f64,
        #[serde(default)]
        channel: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSpec {
    pub rate_hz: f64,
    pub duration_s: f64,
    /// Integrator step; the sample period must be a whole multiple of it.
    #[serde(default = "default_integration_step")]
    pub integration_step: f64,
}

fn default_integration_step() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    /// Isotropic standard deviation; ignored when `covariance` is given.
    #[serde(default)]
    pub sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_seed() -> u64 {
    1
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            sigma: 0.0,
            covariance: None,
            seed: default_seed(),
        }
    }
}

/// A weight matrix as its diagonal or as full rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl MatrixSpec {
    pub fn to_matrix(&self, field: &str) -> Result<DMatrix<f64>, CliError> {
        match self {
            MatrixSpec::Diagonal(d) => Ok(DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(d))),
            MatrixSpec::Full(rows) => rows_to_matrix(rows, field),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsSpec {
    pub m: MatrixSpec,
    pub r: MatrixSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    pub max_outer_iterations: usize,
    pub max_inner_iterations: usize,
    pub constraint_tolerance: f64,
    pub kkt_tolerance: f64,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    /// `"policy-iteration"` or `"identity"`.
    pub initialization: String,
    pub warm_start_iterations: usize,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let o = SolverOptions::default();
        Self {
            max_outer_iterations: o.max_outer_iterations,
            max_inner_iterations: o.max_inner_iterations,
            constraint_tolerance: o.constraint_tolerance,
            kkt_tolerance: o.kkt_tolerance,
            initial_penalty: o.initial_penalty,
            penalty_growth: o.penalty_growth,
            initialization: o.initialization.label().to_string(),
            warm_start_iterations: o.warm_start_iterations,
        }
    }
}

/// One square-wave reference on a state, used by `compare`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoubletSpec {
    pub state: usize,
    pub amplitude_deg: f64,
    pub period: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceSpec {
    pub doublets: Vec<DoubletSpec>,
    pub duration_s: f64,
    pub dt: f64,
}

impl Default for ReferenceSpec {
    fn default() -> Self {
        Self {
            doublets: Vec::new(),
            duration_s: 20.0,
            dt: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySpec {
    /// Number of random suboptimal input signals.
    pub signals: usize,
    /// Window length of each identity check, seconds.
    pub horizon: f64,
    /// Integrator step of the verification runs.
    pub dt: f64,
    /// Peak input amplitude of the random signals.
    pub amplitude: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self {
            signals: 20,
            horizon: 5.0,
            dt: 1e-3,
            amplitude: 0.1,
            tolerance: 1e-6,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

pub(crate) fn rows_to_matrix(rows: &[Vec<f64>], field: &str) -> Result<DMatrix<f64>, CliError> {
    let ncols = rows.first().map(Vec::len).unwrap_or(0);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::Parse(format!("`{field}` must be a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.iter().flatten().copied()))
}

/// Built-in configuration files, by name.
pub const BUILTIN: [(&str, &str); 3] = [
    ("b747", include_str!("../configs/b747.toml")),
    ("b747-clean", include_str!("../configs/b747-clean.toml")),
    ("quad", include_str!("../configs/quad.toml")),
];

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Parse(msg) => CliError::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn builtin(name: &str) -> Result<Self, CliError> {
        let (_, text) = BUILTIN
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| CliError::Parse(format!("no built-in configuration `{name}`")))?;
        Self::parse(text)
    }

    fn validate(&self) -> Result<(), CliError> {
        let s = &self.sampling;
        if !(s.rate_hz > 0.0 && s.duration_s > 0.0 && s.integration_step > 0.0) {
            return Err(CliError::Parse("[sampling] rate_hz, duration_s and integration_step must be positive".into()));
        }
        self.substeps()?;
        if !(self.noise.sigma >= 0.0) {
            return Err(CliError::Parse("[noise] sigma must be non-negative".into()));
        }
        let v = &self.verify;
        if !(v.horizon >= 0.0 && v.dt > 0.0 && v.tolerance > 0.0) {
            return Err(CliError::Parse("[verify] horizon must be non-negative, dt and tolerance positive".into()));
        }
        self.solver_options()?;
        self.cost_weights()?;
        Ok(())
    }

    /// Integrator steps per sample period.
    pub fn substeps(&self) -> Result<usize, CliError> {
        let ratio = 1.0 / (self.sampling.rate_hz * self.sampling.integration_step);
        let n = ratio.round();
        if n < 1.0 || (ratio - n).abs() > 1e-9 * n {
            return Err(CliError::Parse(format!(
                "[sampling] sample period 1/{} s is not a whole multiple of integration_step {}",
                self.sampling.rate_hz, self.sampling.integration_step
            )));
        }
        Ok(n as usize)
    }

    pub fn sample_period(&self) -> f64 {
        self.substeps().map(|n| n as f64 * self.sampling.integration_step).unwrap_or(1.0 / self.sampling.rate_hz)
    }

    pub fn cost_weights(&self) -> Result<CostWeights, CliError> {
        let m = self.weights.m.to_matrix("weights.m")?;
        let r = self.weights.r.to_matrix("weights.r")?;
        CostWeights::new(m, r).map_err(|e| CliError::Parse(format!("[weights] {e}")))
    }

    pub fn solver_options(&self) -> Result<SolverOptions, CliError> {
        let s = &self.solver;
        let initialization = match s.initialization.as_str() {
            "policy-iteration" => Initialization::PolicyIteration,
            "identity" => Initialization::Identity,
            other => {
                return Err(CliError::Parse(format!(
                    "[solver] initialization `{other}` is not `policy-iteration` or `identity`"
                )))
            }
        };
        let options = SolverOptions {
            max_outer_iterations: s.max_outer_iterations,
            max_inner_iterations: s.max_inner_iterations,
            constraint_tolerance: s.constraint_tolerance,
            kkt_tolerance: s.kkt_tolerance,
            initial_penalty: s.initial_penalty,
            penalty_growth: s.penalty_growth,
            initialization,
            warm_start_iterations: s.warm_start_iterations,
            allow_general_c: matches!(&self.plant, PlantSpec::Matrices { c: Some(_), .. }),
        };
        options.validate().map_err(|e| CliError::Parse(format!("[solver] {e}")))?;
        Ok(options)
    }

    /// The configuration with every default written out.
    pub fn resolved_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    /// SHA-256 of the resolved configuration without the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputSpec::default();
        let digest = Sha256::digest(c.resolved_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
