//! Pre-solve data checks and the data-only warm start.

use nalgebra::{DMatrix, DVector};

use super::constraint::Layout;
use crate::linalg::{lower_factor, psd_projection};
use crate::lqr::CostWeights;
use crate::{Error, Result};

/// Relative singular-value threshold for the excitation rank check on the
/// column-normalised regressor.
pub const EXCITATION_RANK_TOL: f64 = 1e-10;

/// Columns of the quadratic regressor: `vech(xxᵀ)` (off-diagonal terms doubled).
fn quadratic_terms(x: &[f64], out: &mut [f64]) {
    let n = x.len();
    let mut c = 0;
    for i in 0..n {
        for j in i..n {
            out[c] = if i == j { x[i] * x[i] } else { 2.0 * x[i] * x[j] };
            c += 1;
        }
    }
}

fn symmetric_from_vech(v: &[f64], n: usize) -> DMatrix<f64> {
    let mut p = DMatrix::zeros(n, n);
    let mut c = 0;
    for i in 0..n {
        for j in i..n {
            p[(i, j)] = v[c];
            p[(j, i)] = v[c];
            c += 1;
        }
    }
    p
}

/// Least-squares solution with column equilibration and an SVD cut-off at
/// machine-precision level.
fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let norms: Vec<f64> = a.column_iter().map(|c| c.norm()).collect();
    let scaled = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| {
        if norms[j] > 0.0 {
            a[(i, j)] / norms[j]
        } else {
            0.0
        }
    });
    let svd = scaled.svd(true, true);
    let smax = svd.singular_values.max();
    let eps = f64::EPSILON * a.nrows().max(a.ncols()) as f64 * smax;
    let x = svd.solve(b, eps).ok()?;
    Some(DVector::from_fn(a.ncols(), |j, _| if norms[j] > 0.0 { x[j] / norms[j] } else { 0.0 }))
}

/// Column-normalised excitation regressor `[vech(x_kx_kᵀ), x_k⊗u_k]` and the
/// indices of columns that are identically zero.
fn excitation_regressor(x: &DMatrix<f64>, u: &DMatrix<f64>, layout: Layout) -> (DMatrix<f64>, Vec<usize>) {
    let n = layout.states;
    let m = layout.inputs;
    let nq = layout.l_len();
    let rows = x.nrows().saturating_sub(1);
    let mut reg = DMatrix::zeros(rows, layout.theta_len());
    let mut q = vec![0.0; nq];
    for k in 0..rows {
        let xk: Vec<f64> = x.row(k).iter().copied().collect();
        quadratic_terms(&xk, &mut q);
        for c in 0..nq {
            reg[(k, c)] = q[c];
        }
        for i in 0..n {
            for j in 0..m {
                reg[(k, nq + i * m + j)] = xk[i] * u[(k, j)];
            }
        }
    }
    let mut zero = Vec::new();
    for (j, mut col) in reg.column_iter_mut().enumerate() {
        let norm = col.norm();
        if norm == 0.0 {
            zero.push(j);
        } else {
            col /= norm;
        }
    }
    (reg, zero)
}

/// Smallest singular value of the column-normalised regressor relative to the largest.
pub fn excitation_condition(x: &DMatrix<f64>, u: &DMatrix<f64>, layout: Layout) -> f64 {
    let sv = excitation_regressor(x, u, layout).0.svd(false, false).singular_values;
    sv.min() / sv.max()
}

/// Rejects data that cannot determine (P, S): zero excitation, too few
/// samples, or a rank-deficient `[vech(xxᵀ), x⊗u]` regressor.
pub fn check_excitation(x: &DMatrix<f64>, u: &DMatrix<f64>, layout: Layout) -> Result<()> {
    let n = layout.states;
    let m = layout.inputs;
    let nq = layout.l_len();
    if u.amax() == 0.0 {
        return Err(Error::DegenerateData("input signal is numerically zero".into()));
    }
    if x.amax() == 0.0 {
        return Err(Error::DegenerateData("observed outputs are identically zero".into()));
    }
    let needed = layout.theta_len().max(n + 1);
    let constraints = x.nrows().saturating_sub(1);
    if x.nrows() < n + 2 || constraints < needed {
        return Err(Error::DegenerateData(format!(
            "{} samples give {constraints} constraints; at least {needed} are needed for {} unknowns",
            x.nrows(),
            layout.theta_len()
        )));
    }
    let (reg, zero) = excitation_regressor(x, u, layout);
    if let Some(&j) = zero.first() {
        let what = if j < nq {
            "a quadratic state term".to_string()
        } else {
            format!("state {} × input {}", (j - nq) / m + 1, (j - nq) % m + 1)
        };
        return Err(Error::DegenerateData(format!(
            "regressor column for {what} is identically zero"
        )));
    }
    let sv = reg.svd(false, false).singular_values;
    let smax = sv.max();
    let rank = sv.iter().filter(|&&s| s > EXCITATION_RANK_TOL * smax).count();
    if rank < layout.theta_len() {
        return Err(Error::DegenerateData(format!(
            "excitation regressor has rank {rank}, need {} (smallest relative singular value {:.2e})",
            layout.theta_len(),
            sv.min() / smax
        )));
    }
    Ok(())
}

/// Outcome of the warm start.
#[derive(Debug, Clone)]
pub struct WarmStart {
    pub l: DMatrix<f64>,
    pub s: DMatrix<f64>,
    /// Policy-improvement steps over all stages.
    pub iterations: usize,
    /// Discount rate of the stage that produced `(l, s)`; zero when the
    /// undiscounted iteration succeeded.
    pub discount: f64,
}

/// Upper bound on discount doublings and continuation stages.
const MAX_STAGES: usize = 40;

/// Result of one policy-iteration run on (possibly discounted) data.
struct Stage {
    p: DMatrix<f64>,
    s: DMatrix<f64>,
    k: DMatrix<f64>,
    iterations: usize,
    /// Converged with a positive semi-definite `P`, which is what a
    /// stabilizing policy produces.
    sane: bool,
}

/// Data-only policy iteration in trapezoidal integral form.
///
/// For the current gain `K_i` each step solves, in least squares over
/// samples, `V(x_{k+1}) − V(x_k) − ∫2xᵀS(u + K_i x) = −∫xᵀ(M + K_iᵀRK_i)x`
/// for symmetric `P` and `S`, then sets `K_{i+1} = R⁻¹Sᵀ`.
///
/// Policy iteration needs a stabilizing initial gain. Starting from `K_0 = 0`
/// it is tried on the raw data first. If that fails, the samples are weighted
/// by `e^{−αt}`, which turns the plant into `A − αI`; `α` is doubled until
/// `K = 0` works and then walked back to zero, each stage warm-started from
/// the previous gain. The final `P` is projected to be positive definite and
/// factored.
pub fn policy_iteration(
    x: &DMatrix<f64>,
    u: &DMatrix<f64>,
    w: &CostWeights,
    dt: f64,
    max_iterations: usize,
) -> Result<WarmStart> {
    let (n, m) = (x.ncols(), u.ncols());
    let duration = dt * (x.nrows() - 1) as f64;
    let zero = DMatrix::<f64>::zeros(m, n);
    let mut total = 0;

    let mut run = |alpha: f64, k0: &DMatrix<f64>| -> Result<Stage> {
        let stage = policy_stage(x, u, w, dt, alpha, k0.clone(), max_iterations)?;
        total += stage.iterations;
        Ok(stage)
    };

    let mut best = run(0.0, &zero)?;
    let mut alpha = 0.0;
    if !best.sane {
        // Find a discount for which K = 0 is stabilizing.
        let mut trial_alpha = 1.0 / duration;
        for _ in 0..MAX_STAGES {
            let trial = run(trial_alpha, &zero)?;
            if trial.sane {
                best = trial;
                alpha = trial_alpha;
                break;
            }
            trial_alpha *= 2.0;
        }
        // Walk the discount back to zero.
        let mut target = 0.0;
        for _ in 0..MAX_STAGES {
            if alpha == 0.0 || !best.sane {
                break;
            }
            let trial = run(target, &best.k)?;
            if trial.sane {
                best = trial;
                alpha = target;
                target = 0.0;
            } else {
                target = 0.5 * (alpha + target);
            }
        }
    }

    let Stage { p, s, .. } = best;
    if p.iter().any(|v| !v.is_finite()) || s.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateData("warm start produced non-finite values".into()));
    }
    let top = p.symmetric_eigenvalues().max();
    let p = if top > 0.0 {
        psd_projection(&p, 1e-6 * top)
    } else {
        DMatrix::identity(n, n)
    };
    let l = lower_factor(&p).unwrap_or_else(|| DMatrix::identity(n, n));
    Ok(WarmStart {
        l,
        s,
        iterations: total,
        discount: alpha,
    })
}

fn policy_stage(
    x: &DMatrix<f64>,
    u: &DMatrix<f64>,
    w: &CostWeights,
    dt: f64,
    alpha: f64,
    mut k_gain: DMatrix<f64>,
    max_iterations: usize,
) -> Result<Stage> {
    let n = x.ncols();
    let m = u.ncols();
    let layout = Layout::new(n, m);
    let nq = layout.l_len();
    let rows = x.nrows() - 1;
    let weight = |k: usize| (-alpha * dt * k as f64).exp();
    let x = DMatrix::from_fn(x.nrows(), n, |k, i| weight(k) * x[(k, i)]);
    let u = DMatrix::from_fn(u.nrows(), m, |k, j| weight(k) * u[(k, j)]);
    let mut p = DMatrix::identity(n, n);
    let mut s = DMatrix::zeros(n, m);
    let mut iterations = 0;
    let mut converged = false;

    // Quadratic regressor rows are the same in every iteration.
    let mut base = DMatrix::zeros(rows, nq);
    let mut q0 = vec![0.0; nq];
    let mut q1 = vec![0.0; nq];
    let xs: Vec<Vec<f64>> = x.row_iter().map(|r| r.iter().copied().collect()).collect();
    for k in 0..rows {
        quadratic_terms(&xs[k], &mut q0);
        quadratic_terms(&xs[k + 1], &mut q1);
        for c in 0..nq {
            base[(k, c)] = q1[c] - q0[c];
        }
    }

    for _ in 0..max_iterations.max(1) {
        iterations += 1;
        let mk = w.m() + k_gain.transpose() * w.r() * &k_gain;
        let mut a = DMatrix::zeros(rows, layout.theta_len());
        a.columns_mut(0, nq).copy_from(&base);
        let mut b = DVector::zeros(rows);
        let closed: Vec<DVector<f64>> = (0..=rows)
            .map(|k| u.row(k).transpose() + &k_gain * x.row(k).transpose())
            .collect();
        for k in 0..rows {
            let x0 = x.row(k).transpose();
            let x1 = x.row(k + 1).transpose();
            for i in 0..n {
                for j in 0..m {
                    a[(k, nq + i * m + j)] = -dt * (x0[i] * closed[k][j] + x1[i] * closed[k + 1][j]);
                }
            }
            b[k] = -0.5 * dt * (x0.dot(&(&mk * &x0)) + x1.dot(&(&mk * &x1)));
        }
        let sol = least_squares(&a, &b)
            .ok_or_else(|| Error::DegenerateData("warm-start least squares failed".into()))?;
        p = symmetric_from_vech(&sol.as_slice()[..nq], n);
        s = DMatrix::from_row_slice(n, m, &sol.as_slice()[nq..]);
        let next = w.r_inv() * s.transpose();
        let change = (&next - &k_gain).amax();
        k_gain = next;
        if !change.is_finite() {
            break;
        }
        if change <= 1e-9 * k_gain.amax().max(1.0) {
            converged = true;
            break;
        }
    }
    let finite = p.iter().chain(s.iter()).all(|v| v.is_finite());
    let sane = converged && finite && {
        let eig = p.symmetric_eigenvalues();
        eig.max() > 0.0 && eig.min() >= -1e-9 * eig.max()
    };
    Ok(Stage {
        p,
        s,
        k: k_gain,
        iterations,
        sane,
    })
}
