//! Augmented-Lagrangian driver for equality-constrained problems
//! `min f(z) s.t. h(z) = 0`.
//!
//! The inner minimization of `Φ(z) = f + λᵀh + (ρ/2)‖h‖²` uses a
//! Levenberg–Marquardt damped Gauss–Newton model: `∇²f + ρJᵀJ`, with the
//! diagonal scaled by `1 + μ` and steps accepted by a gain-ratio test.

use nalgebra::{DMatrix, DVector};

use super::SolverOptions;
use crate::{Error, Result};

const MU_MIN: f64 = 1e-12;
const MU_MAX: f64 = 1e12;
const MU_START: f64 = 1e-3;
/// Relative floor of the Marquardt scaling, so zero or negative curvature
/// entries still receive damping.
pub(crate) const SCALE_FLOOR: f64 = 1e-10;
/// Beyond this the penalty only worsens conditioning.
const RHO_MAX: f64 = 1e12;
/// Accepted steps must realise at least this fraction of the predicted decrease.
const GAIN_RATIO: f64 = 0.25;

/// A damped quadratic model of the augmented Lagrangian at a fixed point.
pub trait DampedModel {
    /// Solves `(H + μ·D) d = −g` with `D_ii = max(|H_ii|, ε·max_j |H_jj|)`;
    /// `None` when the damped matrix is not numerically positive definite.
    fn solve(&self, grad: &DVector<f64>, mu: f64) -> Option<DVector<f64>>;

    /// `dᵀHd` for the undamped model.
    fn curvature(&self, d: &DVector<f64>) -> f64;
}

pub trait EqualityProgram {
    type Model: DampedModel;

    fn objective(&self, z: &DVector<f64>) -> f64;

    fn constraints(&self, z: &DVector<f64>) -> DVector<f64>;

    /// Gradient of `Φ` and its damped model at `z`.
    fn model(&self, z: &DVector<f64>, lambda: &DVector<f64>, rho: f64) -> (DVector<f64>, Self::Model);
}

/// Iterate of the outer loop.
#[derive(Debug, Clone, PartialEq)]
pub struct AlState {
    pub z: DVector<f64>,
    pub lambda: DVector<f64>,
    pub rho: f64,
    /// Levenberg–Marquardt damping carried between inner iterations.
    pub mu: f64,
    /// `max|h|` at the end of the latest outer iteration.
    pub violation: f64,
    /// `‖∇f + Jᵀλ‖_∞` with the updated multipliers.
    pub kkt_residual: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
}

impl AlState {
    pub fn new(z: DVector<f64>, constraints: usize, rho: f64) -> Self {
        Self {
            z,
            lambda: DVector::zeros(constraints),
            rho,
            mu: MU_START,
            violation: f64::INFINITY,
            kkt_residual: f64::INFINITY,
            outer_iterations: 0,
            inner_iterations: 0,
        }
    }

    pub fn converged(&self, options: &SolverOptions) -> bool {
        self.violation <= options.constraint_tolerance && self.kkt_residual <= options.kkt_tolerance
    }
}

fn merit<P: EqualityProgram>(program: &P, z: &DVector<f64>, lambda: &DVector<f64>, rho: f64) -> f64 {
    let h = program.constraints(z);
    program.objective(z) + lambda.dot(&h) + 0.5 * rho * h.norm_squared()
}

/// One outer iteration: inner minimization of `Φ`, then `λ ← λ + ρh`, and
/// `ρ ← growth·ρ` when `max|h|` is above tolerance and did not shrink by 4×.
pub fn augmented_lagrangian_step<P: EqualityProgram>(
    state: &AlState,
    program: &P,
    options: &SolverOptions,
) -> Result<AlState> {
    let mut s = state.clone();
    let mut phi = merit(program, &s.z, &s.lambda, s.rho);
    let mut grad_norm = f64::INFINITY;

    for _ in 0..options.max_inner_iterations {
        let (grad, model) = program.model(&s.z, &s.lambda, s.rho);
        grad_norm = grad.amax();
        if grad_norm <= options.kkt_tolerance {
            break;
        }
        let mut accepted = None;
        let mut factored = false;
        while s.mu <= MU_MAX {
            if let Some(d) = model.solve(&grad, s.mu) {
                factored = true;
                let predicted = -(grad.dot(&d) + 0.5 * model.curvature(&d));
                let trial = &s.z + &d;
                let phi_trial = merit(program, &trial, &s.lambda, s.rho);
                log::trace!("trial mu {:.1e} predicted {:.3e} actual {:.3e}", s.mu, predicted, phi - phi_trial);
                if phi_trial.is_finite() && phi_trial < phi && phi - phi_trial >= GAIN_RATIO * predicted {
                    accepted = Some((trial, phi_trial));
                    s.mu = (s.mu / 3.0).max(MU_MIN);
                    break;
                }
            }
            s.mu = (s.mu * 4.0).max(MU_MIN);
        }
        let Some((z, phi_next)) = accepted else {
            s.mu = MU_START;
            if !factored {
                return Err(Error::LineSearchFailure { damping: MU_MAX });
            }
            // No representable decrease left: the inner problem is solved to
            // working precision.
            break;
        };
        let decrease = phi - phi_next;
        log::trace!("inner mu {:.1e} grad {:.3e} phi {:.6e} decrease {:.3e}", s.mu, grad_norm, phi_next, decrease);
        s.z = z;
        phi = phi_next;
        s.inner_iterations += 1;
        if decrease <= 1e-16 * phi.abs().max(1.0) {
            grad_norm = program.model(&s.z, &s.lambda, s.rho).0.amax();
            break;
        }
        grad_norm = f64::INFINITY;
    }
    if !grad_norm.is_finite() {
        grad_norm = program.model(&s.z, &s.lambda, s.rho).0.amax();
    }

    let h = program.constraints(&s.z);
    let violation = h.amax();
    s.lambda += &h * s.rho;
    if violation > options.constraint_tolerance && violation > state.violation / 4.0 {
        s.rho = (s.rho * options.penalty_growth).min(RHO_MAX);
    }
    s.violation = violation;
    s.kkt_residual = grad_norm;
    s.outer_iterations += 1;
    Ok(s)
}

/// Runs outer iterations until both tolerances hold or the budget is spent.
pub fn run<P: EqualityProgram>(mut state: AlState, program: &P, options: &SolverOptions) -> Result<AlState> {
    while state.outer_iterations < options.max_outer_iterations {
        state = augmented_lagrangian_step(&state, program, options)?;
        log::debug!(
            "outer {} violation {:.3e} kkt {:.3e} rho {:.1e} inner {}",
            state.outer_iterations,
            state.violation,
            state.kkt_residual,
            state.rho,
            state.inner_iterations
        );
        if state.converged(options) {
            break;
        }
    }
    Ok(state)
}

/// Dense Gauss–Newton model `H = ∇²f + ρJᵀJ`.
#[derive(Debug, Clone)]
pub struct DenseModel {
    pub hessian: DMatrix<f64>,
}

impl DampedModel for DenseModel {
    fn solve(&self, grad: &DVector<f64>, mu: f64) -> Option<DVector<f64>> {
        let mut h = self.hessian.clone();
        let floor = (SCALE_FLOOR * self.hessian.diagonal().amax()).max(f64::MIN_POSITIVE);
        for i in 0..h.nrows() {
            h[(i, i)] += mu * self.hessian[(i, i)].abs().max(floor);
        }
        let d = h.cholesky()?.solve(&(-grad));
        d.iter().all(|v| v.is_finite()).then_some(d)
    }

    fn curvature(&self, d: &DVector<f64>) -> f64 {
        d.dot(&(&self.hessian * d))
    }
}

type ScalarFn = Box<dyn Fn(&DVector<f64>) -> f64>;
type VectorFn = Box<dyn Fn(&DVector<f64>) -> DVector<f64>>;
type MatrixFn = Box<dyn Fn(&DVector<f64>) -> DMatrix<f64>>;

/// Small dense problem given by closures.
pub struct DenseProgram {
    pub f: ScalarFn,
    pub grad_f: VectorFn,
    pub hess_f: MatrixFn,
    pub h: VectorFn,
    pub jac_h: MatrixFn,
}

impl EqualityProgram for DenseProgram {
    type Model = DenseModel;

    fn objective(&self, z: &DVector<f64>) -> f64 {
        (self.f)(z)
    }

    fn constraints(&self, z: &DVector<f64>) -> DVector<f64> {
        (self.h)(z)
    }

    fn model(&self, z: &DVector<f64>, lambda: &DVector<f64>, rho: f64) -> (DVector<f64>, DenseModel) {
        let h = (self.h)(z);
        let j = (self.jac_h)(z);
        let weights = lambda + &h * rho;
        let grad = (self.grad_f)(z) + j.transpose() * weights;
        let hessian = (self.hess_f)(z) + j.transpose() * &j * rho;
        (grad, DenseModel { hessian })
    }
}
