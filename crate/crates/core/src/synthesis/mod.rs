//! Model-free gain synthesis: fit the value-function constraint to sampled
//! data by solving
//!
//! ```text
//! min_{L, S, X}  ‖Y − CX‖²
//! s.t.  (x_{k+1}ᵀLᵀLx_{k+1} − x_kᵀLᵀLx_k)/dt
//!         − x_kᵀSR⁻¹Sᵀx_k + x_kᵀMx_k − 2x_kᵀSu_k = 0,   k = 0..N−1
//! ```
//!
//! and returning `P = LᵀL`, `S` and `K = R⁻¹Sᵀ`. The system matrix `A` never
//! appears; `B` enters only through `S = PB`, which is a decision variable.

pub mod al;
mod constraint;
mod init;
mod structured;

use nalgebra::{DMatrix, DVector};

use crate::dynamics::DataSet;
use crate::lqr::{CostWeights, GainMatrix, ValueMatrix};
use crate::{Error, Result};

pub use al::{augmented_lagrangian_step, AlState, DampedModel, DenseModel, DenseProgram, EqualityProgram};
pub use constraint::{
    constraint_residual, dv_forward_euler, nlp_gradients, nlp_objective, ConstraintRow, Layout,
    NlpGradients,
};
pub use init::{check_excitation, excitation_condition, policy_iteration, WarmStart, EXCITATION_RANK_TOL};

use structured::NlpProgram;

/// Starting point for (L, S); X always starts at the observations.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Initialization {
    /// Data-only policy iteration from `K = 0`.
    #[default]
    PolicyIteration,
    /// `L = I`, `S` all ones.
    Identity,
    /// Caller-supplied factors, e.g. from a previous result.
    Warm { l: DMatrix<f64>, s: DMatrix<f64> },
}

impl Initialization {
    pub fn label(&self) -> &'static str {
        match self {
            Initialization::PolicyIteration => "policy-iteration",
            Initialization::Identity => "identity",
            Initialization::Warm { .. } => "warm",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub max_outer_iterations: usize,
    pub max_inner_iterations: usize,
    /// Bound on `max_k dt·|g_k|` for the normalised data.
    pub constraint_tolerance: f64,
    /// Bound on the Lagrangian gradient infinity norm.
    pub kkt_tolerance: f64,
    /// Penalty weight on the scaled constraints `dt·g_k`.
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub initialization: Initialization,
    pub warm_start_iterations: usize,
    /// Accept observation maps other than the identity (no convergence guarantee).
    pub allow_general_c: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_outer_iterations: 200,
            max_inner_iterations: 200,
            constraint_tolerance: 1e-8,
            kkt_tolerance: 1e-6,
            initial_penalty: 1.0,
            penalty_growth: 10.0,
            initialization: Initialization::default(),
            warm_start_iterations: 30,
            allow_general_c: false,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.constraint_tolerance > 0.0 && self.kkt_tolerance > 0.0) {
            return Err(Error::InvalidInput("solver tolerances must be positive".into()));
        }
        if !(self.penalty_growth > 1.0) {
            return Err(Error::InvalidInput("penalty growth factor must exceed 1".into()));
        }
        if !(self.initial_penalty > 0.0) {
            return Err(Error::InvalidInput("initial penalty must be positive".into()));
        }
        if self.max_outer_iterations == 0 || self.max_inner_iterations == 0 {
            return Err(Error::InvalidInput("iteration limits must be positive".into()));
        }
        Ok(())
    }
}

/// Data, weights and observation map for one synthesis run.
#[derive(Debug, Clone)]
pub struct SynthesisProblem {
    pub data: DataSet,
    pub weights: CostWeights,
    pub c: DMatrix<f64>,
    pub states: usize,
    pub options: SolverOptions,
}

impl SynthesisProblem {
    pub fn new(data: DataSet, weights: CostWeights, c: DMatrix<f64>, options: SolverOptions) -> Result<Self> {
        options.validate()?;
        let n = c.ncols();
        if c.nrows() != data.outputs_dim() {
            return Err(Error::DimensionMismatch(format!(
                "C has {} rows, data has {} outputs",
                c.nrows(),
                data.outputs_dim()
            )));
        }
        if weights.m().nrows() != n || weights.r().nrows() != data.inputs_dim() {
            return Err(Error::DimensionMismatch(format!(
                "weights M {:?}, R {:?} do not fit n = {n}, m = {}",
                weights.m().shape(),
                weights.r().shape(),
                data.inputs_dim()
            )));
        }
        let identity = c.is_square() && c == DMatrix::identity(n, n);
        if !identity && !options.allow_general_c {
            return Err(Error::InvalidInput(
                "only C = I is supported unless general observation maps are enabled".into(),
            ));
        }
        Ok(Self {
            data,
            weights,
            c,
            states: n,
            options,
        })
    }

    /// Full-state observation, `C = I`.
    pub fn full_state(data: DataSet, weights: CostWeights, options: SolverOptions) -> Result<Self> {
        let n = data.outputs_dim();
        Self::new(data, weights, DMatrix::identity(n, n), options)
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.states, self.data.inputs_dim())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    /// `‖Y − CX̂‖²` in data units.
    pub objective: f64,
    /// `max_k dt·|g_k|` on the normalised data.
    pub max_violation: f64,
    /// `max_k |g_k|` in data units.
    pub max_violation_raw: f64,
    pub kkt_residual: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub penalty: f64,
    pub converged: bool,
    pub initialization: String,
    /// RMS of the observations used to normalise the data.
    pub data_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisResult {
    pub l: DMatrix<f64>,
    pub p: ValueMatrix,
    pub s: DMatrix<f64>,
    pub k: GainMatrix,
    /// Denoised state estimates, one sample per row.
    pub states: DMatrix<f64>,
    pub diagnostics: Diagnostics,
}

impl SynthesisResult {
    /// Assembles a result from the factors, recomputing `P` and `K`.
    pub fn from_factors(
        l: DMatrix<f64>,
        s: DMatrix<f64>,
        states: DMatrix<f64>,
        weights: &CostWeights,
        diagnostics: Diagnostics,
    ) -> Result<Self> {
        let n = l.nrows();
        if !l.is_square() || s.nrows() != n || weights.r().nrows() != s.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "L {:?}, S {:?} and R {:?} are inconsistent",
                l.shape(),
                s.shape(),
                weights.r().shape()
            )));
        }
        let l = l.lower_triangle();
        let p = ValueMatrix::new(l.transpose() * &l)?;
        let k = GainMatrix::new(weights.r_inv() * s.transpose());
        Ok(Self {
            l,
            p,
            s,
            k,
            states,
            diagnostics,
        })
    }

    /// `Ok` when converged, otherwise `Err(MaxIterations)` carrying the result.
    pub fn into_converged(self) -> Result<Self> {
        if self.diagnostics.converged {
            Ok(self)
        } else {
            Err(Error::MaxIterations(Box::new(self)))
        }
    }
}

/// Offset of initial state rows that are exactly zero, in normalised units.
const ZERO_ROW_NUDGE: f64 = 1e-4;

/// A state row at exactly zero is a stationary point of every constraint it
/// enters, so Newton steps never move it. Records that start at rest hit this.
fn nudge_zero_rows(mut x: DMatrix<f64>) -> DMatrix<f64> {
    for mut row in x.row_iter_mut() {
        if row.iter().all(|v| *v == 0.0) {
            row.fill(ZERO_ROW_NUDGE);
        }
    }
    x
}

fn rms(m: &DMatrix<f64>) -> f64 {
    (m.norm_squared() / m.len() as f64).sqrt()
}

/// Solves the data-driven NLP.
///
/// Non-convergence is reported through `diagnostics.converged = false`, not
/// an error. Degenerate data is rejected before any iteration.
pub fn solve_nlp(problem: &SynthesisProblem) -> Result<SynthesisResult> {
    let options = &problem.options;
    let layout = problem.layout();
    let data = &problem.data;
    let w = &problem.weights;
    let n = layout.states;

    let scale = rms(&data.outputs);
    if !(scale > 0.0) {
        return Err(Error::DegenerateData("observed outputs are identically zero".into()));
    }
    let y = &data.outputs / scale;
    let u = &data.inputs / scale;
    let x0 = if problem.c.is_square() && problem.c == DMatrix::identity(n, n) {
        y.clone()
    } else {
        let pinv = problem
            .c
            .clone()
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        &y * pinv.transpose()
    };
    check_excitation(&x0, &u, layout)?;
    let x0 = nudge_zero_rows(x0);

    let (l0, s0) = match &options.initialization {
        Initialization::PolicyIteration => {
            let ws = policy_iteration(&x0, &u, w, data.dt, options.warm_start_iterations)?;
            (ws.l, ws.s)
        }
        Initialization::Identity => (DMatrix::identity(n, n), DMatrix::from_element(n, layout.inputs, 1.0)),
        Initialization::Warm { l, s } => {
            if l.shape() != (n, n) || s.shape() != (n, layout.inputs) {
                return Err(Error::DimensionMismatch(format!(
                    "warm start L {:?}, S {:?} do not fit n = {n}, m = {}",
                    l.shape(),
                    s.shape(),
                    layout.inputs
                )));
            }
            (l.lower_triangle(), s.clone())
        }
    };

    let program = NlpProgram::new(layout, &y, &u, problem.c.clone(), w, data.dt);
    let mut z = DVector::zeros(program.dim());
    z.rows_mut(0, layout.theta_len()).copy_from(&layout.pack(&l0, &s0));
    z.rows_mut(layout.theta_len(), data.samples() * n)
        .copy_from(&DVector::from_row_slice(x0.transpose().as_slice()));

    let state = AlState::new(z, program.constraint_count(), options.initial_penalty);
    let state = match al::run(state, &program, options) {
        Ok(s) => s,
        Err(Error::LineSearchFailure { damping }) => {
            log::warn!("damped model could not be factored (damping {damping:e})");
            return Err(Error::LineSearchFailure { damping });
        }
        Err(e) => return Err(e),
    };

    let converged = state.converged(options);
    let (l, s) = layout.unpack(&state.z.as_slice()[..layout.theta_len()]);
    let states = program.states_matrix(&state.z) * scale;
    let diagnostics = Diagnostics {
        objective: program.objective(&state.z) * scale * scale,
        max_violation: state.violation,
        max_violation_raw: state.violation * scale * scale / data.dt,
        kkt_residual: state.kkt_residual,
        outer_iterations: state.outer_iterations,
        inner_iterations: state.inner_iterations,
        penalty: state.rho,
        converged,
        initialization: options.initialization.label().to_string(),
        data_scale: scale,
    };
    SynthesisResult::from_factors(l, s, states, w, diagnostics)
}
