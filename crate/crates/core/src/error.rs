use thiserror::Error;

use crate::synthesis::SynthesisResult;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    // --- Riccati / LQR ---
    #[error("(A, B) is not stabilizable: uncontrollable mode at eigenvalue {eigenvalue}")]
    NotStabilizable { eigenvalue: String },

    #[error("(A, M) is not detectable: unobservable mode at eigenvalue {eigenvalue}")]
    NotDetectable { eigenvalue: String },

    #[error("Riccati iteration converged to an indefinite value matrix (min eigenvalue {min_eigenvalue:e})")]
    NoPsdSolution { min_eigenvalue: f64 },

    #[error("input weight R is singular or not positive definite")]
    SingularR,

    #[error("Lyapunov equation is singular (closed loop has eigenvalues summing to zero)")]
    SingularLyapunov,

    #[error("iteration failed to converge: {0}")]
    NoConvergence(String),

    // --- simulation ---
    #[error("state became non-finite at t = {time}")]
    NonFiniteState { time: f64 },

    #[error("pitch angle {theta} rad is too close to ±π/2 (Euler kinematics singular)")]
    GimbalLock { theta: f64 },

    #[error("linearization point is not an equilibrium: ‖f(x, u)‖ = {residual:e}")]
    NotAnEquilibrium { residual: f64 },

    // --- synthesis ---
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("solver stopped after {} outer iterations without meeting tolerances", .0.diagnostics.outer_iterations)]
    MaxIterations(Box<SynthesisResult>),

    #[error("line search failed: no acceptable step (damping {damping:e})")]
    LineSearchFailure { damping: f64 },

    // --- quadrature ---
    #[error("trajectory too short: need data up to t = {needed}, have up to t = {available}")]
    HorizonTooShort { needed: f64, available: f64 },

    // --- file formats ---
    #[error("schema violation at {location}: {message}")]
    SchemaViolation { location: String, message: String },

    #[error("non-uniform time grid at row {row}: spacing {spacing} differs from dt = {dt}")]
    NonUniformTime { row: usize, spacing: f64, dt: f64 },

    #[error("non-finite value at row {row}, column `{column}`")]
    NonFiniteValue { row: usize, column: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn schema(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::SchemaViolation {
            location: location.into(),
            message: message.into(),
        }
    }
}
