//! Verification harness for the Q-function view of the constraint: cost-to-go
//! quadrature, the advantage integral, the finite-horizon value identity that
//! holds for arbitrary inputs, and the equivalence between the Euler-discretized
//! advantage identity and the synthesis constraint.
//!
//! Everything here needs the true `(A, B)`; it checks the model-free path, it
//! is not part of it.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{DataSet, Trajectory};
use crate::linalg::{lower_factor, psd_square_root_factor};
use crate::lqr::{quad_form, running_cost, value, CostWeights, LtiSystem, ValueMatrix};
use crate::synthesis::{constraint_residual, dv_forward_euler};
use crate::{Error, Result};

/// Composite Simpson rule on uniformly spaced samples; an odd interval count
/// closes with Simpson's 3/8 rule on the last three intervals.
pub fn simpson(values: &[f64], h: f64) -> f64 {
    let intervals = values.len().saturating_sub(1);
    match intervals {
        0 => 0.0,
        1 => 0.5 * h * (values[0] + values[1]),
        _ => {
            let even = if intervals % 2 == 0 { intervals } else { intervals - 3 };
            let mut sum = 0.0;
            for i in (0..even).step_by(2) {
                sum += values[i] + 4.0 * values[i + 1] + values[i + 2];
            }
            let mut total = sum * h / 3.0;
            if even != intervals {
                let f = &values[even..];
                total += 3.0 * h / 8.0 * (f[0] + 3.0 * f[1] + 3.0 * f[2] + f[3]);
            }
            total
        }
    }
}

/// Sample index of time `t` on the trajectory grid.
fn grid_index(traj: &Trajectory, t: f64) -> Result<usize> {
    let dt = traj
        .uniform_dt()
        .ok_or_else(|| Error::InvalidInput("quadrature needs a uniform time grid".into()))?;
    let last = *traj.times.last().expect("uniform grid has samples");
    if t > last + 1e-9 * dt {
        return Err(Error::HorizonTooShort {
            needed: t,
            available: last,
        });
    }
    let pos = (t - traj.times[0]) / dt;
    let k = pos.round();
    if k < 0.0 || (pos - k).abs() > 1e-6 {
        return Err(Error::InvalidInput(format!(
            "time {t} is not on the sample grid (dt = {dt})"
        )));
    }
    Ok(k as usize)
}

/// Integrates `f(k)` over the samples between `t0` and `t1` on the grid.
fn integrate_window(traj: &Trajectory, t0: f64, t1: f64, f: impl Fn(usize) -> f64) -> Result<f64> {
    if t1 < t0 {
        return Err(Error::InvalidInput(format!("window end {t1} precedes start {t0}")));
    }
    let a = grid_index(traj, t0)?;
    let b = grid_index(traj, t1)?;
    if a == b {
        return Ok(0.0);
    }
    let h = traj.times[1] - traj.times[0];
    let values: Vec<f64> = (a..=b).map(f).collect();
    Ok(simpson(&values, h))
}

/// Truncated cost-to-go `∫_t^{t+T} xᵀMx + uᵀRu`.
#[derive(Debug, Clone, PartialEq)]
pub struct QEvaluation {
    pub start: f64,
    pub truncation: f64,
    pub value: f64,
    /// `x(t+T)ᵀPx(t+T)`, the optimal cost of the omitted tail, when `P` is known.
    pub tail_estimate: Option<f64>,
}

/// `∫_t^{t+T_trunc} ℓ(x, u)` by composite Simpson on the trajectory grid.
pub fn q_value(traj: &Trajectory, w: &CostWeights, t: f64, truncation: f64) -> Result<f64> {
    integrate_window(traj, t, t + truncation, |k| {
        running_cost(w, &traj.state(k), &traj.input(k))
    })
}

/// [`q_value`] plus the optimal-tail estimate from `P`.
pub fn q_evaluation(
    traj: &Trajectory,
    w: &CostWeights,
    p: Option<&ValueMatrix>,
    t: f64,
    truncation: f64,
) -> Result<QEvaluation> {
    let value = q_value(traj, w, t, truncation)?;
    let tail_estimate = match p {
        Some(p) => Some(crate::lqr::value(p, &traj.state(grid_index(traj, t + truncation)?))),
        None => None,
    };
    Ok(QEvaluation {
        start: t,
        truncation,
        value,
        tail_estimate,
    })
}

/// `‖u + R⁻¹BᵀPx‖²_R` at sample `k`.
fn advantage_density(traj: &Trajectory, kp: &DMatrix<f64>, w: &CostWeights, k: usize) -> f64 {
    let dev = traj.input(k) + kp * traj.state(k);
    quad_form(w.r(), &dev)
}

fn optimal_gain(p: &ValueMatrix, sys: &LtiSystem, w: &CostWeights) -> DMatrix<f64> {
    w.r_inv() * sys.b().transpose() * p.matrix()
}

/// `∫_t^{t+T} ‖u + R⁻¹BᵀPx‖²_R`.
pub fn advantage_integral(
    traj: &Trajectory,
    p: &ValueMatrix,
    sys: &LtiSystem,
    w: &CostWeights,
    t: f64,
    truncation: f64,
) -> Result<f64> {
    let kp = optimal_gain(p, sys, w);
    integrate_window(traj, t, t + truncation, |k| advantage_density(traj, &kp, w, k))
}

/// Both sides of `V(x(t)) + ∫‖u + R⁻¹BᵀPx‖²_R = V(x(t+T)) + ∫ℓ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma2Check {
    pub lhs: f64,
    pub rhs: f64,
}

impl Lemma2Check {
    pub fn residual(&self) -> f64 {
        (self.lhs - self.rhs).abs()
    }

    /// `|LHS − RHS| ≤ tol·(1 + |LHS|)`.
    pub fn holds(&self, tol: f64) -> bool {
        self.residual() <= tol * (1.0 + self.lhs.abs())
    }
}

/// Evaluates the finite-horizon value identity on `[t, t+T]`. For `P` solving
/// the Riccati equation it holds for any input signal.
pub fn check_lemma2(
    p: &ValueMatrix,
    traj: &Trajectory,
    sys: &LtiSystem,
    w: &CostWeights,
    t: f64,
    horizon: f64,
) -> Result<Lemma2Check> {
    let a = grid_index(traj, t)?;
    let b = grid_index(traj, t + horizon)?;
    let adv = advantage_integral(traj, p, sys, w, t, horizon)?;
    let cost = q_value(traj, w, t, horizon)?;
    Ok(Lemma2Check {
        lhs: value(p, &traj.state(a)) + adv,
        rhs: value(p, &traj.state(b)) + cost,
    })
}

/// `|Q(t) − Q(t+T) − ∫_t^{t+T} ℓ|` with both cost-to-go values truncated at `t + T_trunc`.
pub fn semi_group_residual(
    traj: &Trajectory,
    w: &CostWeights,
    t: f64,
    horizon: f64,
    truncation: f64,
) -> Result<f64> {
    if horizon > truncation {
        return Err(Error::InvalidInput(format!(
            "semi-group step {horizon} exceeds truncation {truncation}"
        )));
    }
    let end = t + truncation;
    let q_t = q_value(traj, w, t, truncation)?;
    let q_later = q_value(traj, w, t + horizon, end - (t + horizon))?;
    let between = q_value(traj, w, t, horizon)?;
    Ok((q_t - q_later - between).abs())
}

/// Per-sample comparison of the Euler-discretized advantage identity with the
/// synthesis constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    /// `max_k |advantage form − constraint form|`.
    pub max_difference: f64,
    /// `max_k |g_k|`.
    pub max_residual: f64,
    pub advantage_form: Vec<f64>,
    pub constraint_form: Vec<f64>,
}

/// Evaluates `D_k − [‖u_k + R⁻¹Sᵀx_k‖²_R − ℓ(x_k, u_k)]` and `g_k` on every
/// sample of a data set (outputs taken as states).
pub fn discrete_equivalence_check(
    data: &DataSet,
    p: &ValueMatrix,
    s: &DMatrix<f64>,
    w: &CostWeights,
) -> Result<EquivalenceReport> {
    let n = p.dim();
    if data.outputs_dim() != n || s.shape() != (n, data.inputs_dim()) {
        return Err(Error::DimensionMismatch(format!(
            "P is {n}×{n}, S is {:?}, data has {} outputs and {} inputs",
            s.shape(),
            data.outputs_dim(),
            data.inputs_dim()
        )));
    }
    let l = lower_factor(p.matrix()).unwrap_or_else(|| psd_square_root_factor(p.matrix()));
    let ks = w.r_inv() * s.transpose();
    let mut advantage_form = Vec::with_capacity(data.samples() - 1);
    let mut constraint_form = Vec::with_capacity(data.samples() - 1);
    for k in 0..data.samples() - 1 {
        let x0: DVector<f64> = data.outputs.row(k).transpose();
        let x1: DVector<f64> = data.outputs.row(k + 1).transpose();
        let u: DVector<f64> = data.inputs.row(k).transpose();
        let dv = dv_forward_euler(p, &x0, &x1, data.dt);
        let adv = quad_form(w.r(), &(&u + &ks * &x0));
        advantage_form.push(dv - (adv - running_cost(w, &x0, &u)));
        constraint_form.push(constraint_residual(&l, s, &x0, &x1, &u, w, data.dt));
    }
    let max_difference = advantage_form
        .iter()
        .zip(&constraint_form)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let max_residual = constraint_form.iter().map(|g| g.abs()).fold(0.0, f64::max);
    Ok(EquivalenceReport {
        max_difference,
        max_residual,
        advantage_form,
        constraint_form,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{simulate_closed_loop, simulate_lti, Plant};
    use crate::lqr::{lqr_gain, solve_are};
    use crate::models;
    use approx::assert_relative_eq;

    #[test]
    fn simpson_is_exact_on_cubics() {
        let h = 0.1;
        for count in [3usize, 4, 5, 8, 11] {
            let v: Vec<f64> = (0..count).map(|k| (k as f64 * h).powi(3)).collect();
            let end = (count - 1) as f64 * h;
            assert_relative_eq!(simpson(&v, h), end.powi(4) / 4.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn q_of_zero_trajectory() {
        let sys = models::b747_lateral();
        let traj = simulate_lti(&sys, &DVector::zeros(4), &|_| DVector::zeros(1), 5.0, 0.1).unwrap();
        assert_eq!(q_value(&traj, &models::b747_weights(), 0.0, 5.0).unwrap(), 0.0);
    }

    #[test]
    fn q_of_scalar_decay() {
        let sys = LtiSystem::full_state(-DMatrix::identity(1, 1), DMatrix::zeros(1, 1)).unwrap();
        let w = CostWeights::diagonal(&[1.0], &[1.0]).unwrap();
        let traj = simulate_lti(&sys, &DVector::from_element(1, 1.0), &|_| DVector::zeros(1), 20.0, 0.01).unwrap();
        assert_relative_eq!(q_value(&traj, &w, 0.0, 20.0).unwrap(), 0.5, epsilon = 1e-6);
    }

    #[test]
    fn optimal_q_equals_value() {
        let sys = models::b747_lateral();
        let w = models::b747_weights();
        let p = solve_are(&sys, &w).unwrap();
        let k = lqr_gain(&p, &sys, &w).unwrap();
        let x0 = DVector::from_vec(vec![0.1, -0.05, 0.02, 0.2]);
        let traj = simulate_closed_loop(&Plant::Lti(sys.clone()), &k, &x0, &|_| DVector::zeros(4), 40.0, 0.01)
            .unwrap();
        let q = q_value(&traj, &w, 0.0, 40.0).unwrap();
        let v = value(&p, &x0);
        assert!((q - v).abs() <= 1e-3 * v, "{q} vs {v}");
        assert!(advantage_integral(&traj, &p, &sys, &w, 0.0, 40.0).unwrap() < 1e-12);
    }

    #[test]
    fn horizon_beyond_data() {
        let sys = models::b747_lateral();
        let traj = simulate_lti(&sys, &DVector::zeros(4), &|_| DVector::zeros(1), 1.0, 0.1).unwrap();
        assert!(matches!(
            q_value(&traj, &models::b747_weights(), 0.0, 2.0),
            Err(Error::HorizonTooShort { .. })
        ));
    }

    #[test]
    fn empty_window_lemma() {
        let sys = models::b747_lateral();
        let w = models::b747_weights();
        let p = solve_are(&sys, &w).unwrap();
        let traj = simulate_lti(&sys, &DVector::from_element(4, 0.1), &|t| DVector::from_element(1, t.sin()), 2.0, 0.01)
            .unwrap();
        assert_eq!(check_lemma2(&p, &traj, &sys, &w, 0.5, 0.0).unwrap().residual(), 0.0);
    }
}
