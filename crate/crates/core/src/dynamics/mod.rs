//! Trajectory generation: RK4 simulation of LTI and quadcopter plants,
//! excitation signals, the noisy observation model and closed-loop runs.

pub mod quad;
mod signals;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::{is_psd, is_symmetric, psd_square_root_factor};
use crate::lqr::{GainMatrix, LtiSystem};
use crate::{Error, Result};

pub use quad::{QuadParams, QuadState};
pub use signals::{chirp_input, doublet_input, multisine, on_channel, Chirp, Doublet};

/// Relative tolerance on sample spacing for a grid to count as uniform.
pub const UNIFORM_TOL: f64 = 1e-9;

/// Sampled states and inputs; row `k` of `states`/`inputs` belongs to `times[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: DMatrix<f64>,
    pub inputs: DMatrix<f64>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: DMatrix<f64>, inputs: DMatrix<f64>) -> Result<Self> {
        if states.nrows() != times.len() || inputs.nrows() != times.len() {
            return Err(Error::DimensionMismatch(format!(
                "trajectory has {} times, {} state rows, {} input rows",
                times.len(),
                states.nrows(),
                inputs.nrows()
            )));
        }
        if let Some(k) = times.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput(format!(
                "times must be strictly increasing (row {})",
                k + 1
            )));
        }
        Ok(Self {
            times,
            states,
            inputs,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn states_dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn inputs_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn state(&self, k: usize) -> DVector<f64> {
        self.states.row(k).transpose()
    }

    pub fn input(&self, k: usize) -> DVector<f64> {
        self.inputs.row(k).transpose()
    }

    /// Common spacing if the grid is uniform within `UNIFORM_TOL`.
    pub fn uniform_dt(&self) -> Option<f64> {
        uniform_spacing(&self.times).ok()
    }

    /// Keeps the listed state columns and input columns.
    pub fn select(&self, states: &[usize], inputs: &[usize]) -> Self {
        Self {
            times: self.times.clone(),
            states: self.states.select_columns(states),
            inputs: self.inputs.select_columns(inputs),
        }
    }

    /// Every `stride`-th sample, starting with the first.
    pub fn decimate(&self, stride: usize) -> Self {
        let rows: Vec<usize> = (0..self.len()).step_by(stride.max(1)).collect();
        Self {
            times: rows.iter().map(|&k| self.times[k]).collect(),
            states: self.states.select_rows(&rows),
            inputs: self.inputs.select_rows(&rows),
        }
    }
}

/// Uniformly sampled observations `{t_k, u_k, y_k}`; the only input to synthesis.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    pub times: Vec<f64>,
    pub inputs: DMatrix<f64>,
    pub outputs: DMatrix<f64>,
    pub dt: f64,
}

impl DataSet {
    pub fn new(times: Vec<f64>, inputs: DMatrix<f64>, outputs: DMatrix<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "a data set needs at least 2 samples, got {}",
                times.len()
            )));
        }
        if inputs.nrows() != times.len() || outputs.nrows() != times.len() {
            return Err(Error::DimensionMismatch(format!(
                "data set has {} times, {} input rows, {} output rows",
                times.len(),
                inputs.nrows(),
                outputs.nrows()
            )));
        }
        if inputs.ncols() == 0 || outputs.ncols() == 0 {
            return Err(Error::DimensionMismatch(
                "data set needs at least one input and one output channel".into(),
            ));
        }
        let dt = uniform_spacing(&times)?;
        for (k, row) in inputs.row_iter().enumerate() {
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue {
                    row: k,
                    column: format!("u_{}", j + 1),
                });
            }
        }
        for (k, row) in outputs.row_iter().enumerate() {
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue {
                    row: k,
                    column: format!("y_{}", j + 1),
                });
            }
        }
        Ok(Self {
            times,
            inputs,
            outputs,
            dt,
        })
    }

    pub fn samples(&self) -> usize {
        self.times.len()
    }

    pub fn inputs_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn outputs_dim(&self) -> usize {
        self.outputs.ncols()
    }

    /// First `len` samples.
    pub fn truncate(&self, len: usize) -> Result<Self> {
        let len = len.min(self.samples());
        Self::new(
            self.times[..len].to_vec(),
            self.inputs.rows(0, len).into_owned(),
            self.outputs.rows(0, len).into_owned(),
        )
    }
}

/// Checks that `times` is uniformly spaced and returns the spacing.
pub(crate) fn uniform_spacing(times: &[f64]) -> Result<f64> {
    if times.len() < 2 {
        return Err(Error::InvalidInput("need at least two time samples".into()));
    }
    let n = times.len() - 1;
    let dt = (times[n] - times[0]) / n as f64;
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::NonUniformTime {
            row: 1,
            spacing: times[1] - times[0],
            dt,
        });
    }
    for k in 1..times.len() {
        let expected = times[0] + k as f64 * dt;
        // Absolute positions are checked so a single jittered stamp is
        // reported at its own row.
        if (times[k] - expected).abs() > UNIFORM_TOL * dt {
            return Err(Error::NonUniformTime {
                row: k,
                spacing: times[k] - times[k - 1],
                dt,
            });
        }
    }
    Ok(dt)
}

/// Zero-mean Gaussian measurement noise `ε ∼ N(0, Σ)` from a seeded ChaCha stream.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    covariance: DMatrix<f64>,
    seed: u64,
}

impl NoiseModel {
    pub fn new(covariance: DMatrix<f64>, seed: u64) -> Result<Self> {
        if !is_symmetric(&covariance, 1e-12) || !is_psd(&covariance) {
            return Err(Error::InvalidInput(
                "noise covariance must be symmetric positive semi-definite".into(),
            ));
        }
        Ok(Self { covariance, seed })
    }

    /// `Σ = σ²I` on `p` channels.
    pub fn isotropic(p: usize, sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidInput(format!("noise σ must be ≥ 0, got {sigma}")));
        }
        Self::new(DMatrix::identity(p, p) * (sigma * sigma), seed)
    }

    pub fn noiseless(p: usize) -> Self {
        Self {
            covariance: DMatrix::zeros(p, p),
            seed: 0,
        }
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_zero(&self) -> bool {
        self.covariance.iter().all(|&v| v == 0.0)
    }
}

/// Right-hand side evaluated by the integrators; errors abort the run.
type Rhs<'a> = dyn Fn(f64, &DVector<f64>) -> Result<DVector<f64>> + 'a;

fn rk4_step(f: &Rhs<'_>, t: f64, x: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
    let k1 = f(t, x)?;
    let k2 = f(t + 0.5 * h, &(x + &k1 * (0.5 * h)))?;
    let k3 = f(t + 0.5 * h, &(x + &k2 * (0.5 * h)))?;
    let k4 = f(t + h, &(x + &k3 * h))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

/// Number of `dt` steps in `[0, t_final]`; `t_final` must be a multiple of `dt`.
fn step_count(t_final: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidInput(format!("dt must be > 0, got {dt}")));
    }
    if !(t_final >= dt) || !t_final.is_finite() {
        return Err(Error::InvalidInput(format!(
            "final time {t_final} must be at least dt = {dt}"
        )));
    }
    let steps = (t_final / dt).round();
    if (steps * dt - t_final).abs() > 1e-9 * t_final {
        return Err(Error::InvalidInput(format!(
            "final time {t_final} is not a multiple of dt = {dt}"
        )));
    }
    Ok(steps as usize)
}

/// Integrates `f` on a uniform grid, recording `record(t, x)` at every sample.
fn integrate(
    f: &Rhs<'_>,
    x0: DVector<f64>,
    t_final: f64,
    dt: f64,
    substeps: usize,
    mut record: impl FnMut(usize, f64, &DVector<f64>) -> Result<()>,
) -> Result<()> {
    let steps = step_count(t_final, dt)?;
    let substeps = substeps.max(1);
    let h = dt / substeps as f64;
    let mut x = x0;
    record(0, 0.0, &x)?;
    for k in 0..steps {
        for j in 0..substeps {
            let t = k as f64 * dt + j as f64 * h;
            x = rk4_step(f, t, &x, h)?;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState { time: t + h });
            }
        }
        let t = (k + 1) as f64 * dt;
        record(k + 1, t, &x)?;
    }
    Ok(())
}

/// RK4 simulation of `ẋ = Ax + Bu(t)` sampled every `dt` over `[0, t_final]`.
pub fn simulate_lti(
    sys: &LtiSystem,
    x0: &DVector<f64>,
    input: &dyn Fn(f64) -> DVector<f64>,
    t_final: f64,
    dt: f64,
) -> Result<Trajectory> {
    simulate_lti_substeps(sys, x0, input, t_final, dt, 1)
}

/// As [`simulate_lti`], with `substeps` RK4 steps between recorded samples.
pub fn simulate_lti_substeps(
    sys: &LtiSystem,
    x0: &DVector<f64>,
    input: &dyn Fn(f64) -> DVector<f64>,
    t_final: f64,
    dt: f64,
    substeps: usize,
) -> Result<Trajectory> {
    let n = sys.states();
    let m = sys.inputs();
    if x0.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "initial state has {} entries, system has {n} states",
            x0.len()
        )));
    }
    let probe = input(0.0);
    if probe.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "input signal has {} channels, system has {m} inputs",
            probe.len()
        )));
    }
    let steps = step_count(t_final, dt)?;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = DMatrix::zeros(steps + 1, n);
    let mut inputs = DMatrix::zeros(steps + 1, m);
    let rhs = |t: f64, x: &DVector<f64>| Ok(sys.derivative(x, &input(t)));
    integrate(&rhs, x0.clone(), t_final, dt, substeps, |k, t, x| {
        times.push(t);
        states.set_row(k, &x.transpose());
        inputs.set_row(k, &input(t).transpose());
        Ok(())
    })?;
    Trajectory::new(times, states, inputs)
}

/// `y_k = C x_k + ε_k` with `ε_k` drawn from the seeded noise stream.
pub fn observe(traj: &Trajectory, c: &DMatrix<f64>, noise: &NoiseModel) -> Result<DataSet> {
    if c.ncols() != traj.states_dim() {
        return Err(Error::DimensionMismatch(format!(
            "C has {} columns, trajectory has {} states",
            c.ncols(),
            traj.states_dim()
        )));
    }
    let p = c.nrows();
    if noise.covariance.nrows() != p {
        return Err(Error::DimensionMismatch(format!(
            "noise covariance is {}×{}, C has {p} rows",
            noise.covariance.nrows(),
            noise.covariance.ncols()
        )));
    }
    let mut outputs = &traj.states * c.transpose();
    if !noise.is_zero() {
        // ε = Fᵀz with Σ = FᵀF and z standard normal.
        let ft = psd_square_root_factor(&noise.covariance).transpose();
        let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
        let mut z = DVector::zeros(p);
        for k in 0..outputs.nrows() {
            for v in z.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            let eps = &ft * &z;
            for j in 0..p {
                outputs[(k, j)] += eps[j];
            }
        }
    }
    DataSet::new(traj.times.clone(), traj.inputs.clone(), outputs)
}

/// Central-difference linearization of `ẋ = f(x, u)` about an equilibrium.
pub fn linearize(
    f: &dyn Fn(&DVector<f64>, &DVector<f64>) -> Result<DVector<f64>>,
    x_eq: &DVector<f64>,
    u_eq: &DVector<f64>,
    h: f64,
) -> Result<LtiSystem> {
    if !(h > 0.0) {
        return Err(Error::InvalidInput(format!("step must be > 0, got {h}")));
    }
    let f0 = f(x_eq, u_eq)?;
    let residual = f0.norm();
    if residual > 1e-6 {
        return Err(Error::NotAnEquilibrium { residual });
    }
    let n = x_eq.len();
    let m = u_eq.len();
    let mut a = DMatrix::zeros(f0.len(), n);
    for j in 0..n {
        let mut xp = x_eq.clone();
        let mut xm = x_eq.clone();
        xp[j] += h;
        xm[j] -= h;
        let col = (f(&xp, u_eq)? - f(&xm, u_eq)?) / (2.0 * h);
        a.set_column(j, &col);
    }
    let mut b = DMatrix::zeros(f0.len(), m);
    for j in 0..m {
        let mut up = u_eq.clone();
        let mut um = u_eq.clone();
        up[j] += h;
        um[j] -= h;
        let col = (f(x_eq, &up)? - f(x_eq, &um)?) / (2.0 * h);
        b.set_column(j, &col);
    }
    LtiSystem::full_state(a, b)
}

/// A plant for closed-loop runs.
#[derive(Debug, Clone)]
pub enum Plant {
    Lti(LtiSystem),
    /// Nonlinear quadcopter; the gain acts on (φ, θ, p, q) and commands (τ_r, τ_p)
    /// on top of hover throttle.
    Quad(QuadParams),
}

/// Simulates `u = −K(x − x_ref(t))` applied at every integrator stage.
///
/// For the quadcopter `x0` is the 12-state vector, `x_ref` returns the
/// 4-vector (φ, θ, p, q) reference, and the recorded inputs are the full
/// (Γ, τ_r, τ_p, τ_y) command.
pub fn simulate_closed_loop(
    plant: &Plant,
    k: &GainMatrix,
    x0: &DVector<f64>,
    x_ref: &dyn Fn(f64) -> DVector<f64>,
    t_final: f64,
    dt: f64,
) -> Result<Trajectory> {
    match plant {
        Plant::Lti(sys) => {
            if k.matrix().shape() != (sys.inputs(), sys.states()) {
                return Err(Error::DimensionMismatch(format!(
                    "gain is {:?}, plant needs {}×{}",
                    k.matrix().shape(),
                    sys.inputs(),
                    sys.states()
                )));
            }
            let control = |t: f64, x: &DVector<f64>| k.control(&(x - x_ref(t)));
            let steps = step_count(t_final, dt)?;
            let mut times = Vec::with_capacity(steps + 1);
            let mut states = DMatrix::zeros(steps + 1, sys.states());
            let mut inputs = DMatrix::zeros(steps + 1, sys.inputs());
            let rhs = |t: f64, x: &DVector<f64>| Ok(sys.derivative(x, &control(t, x)));
            integrate(&rhs, x0.clone(), t_final, dt, 1, |i, t, x| {
                times.push(t);
                states.set_row(i, &x.transpose());
                inputs.set_row(i, &control(t, x).transpose());
                Ok(())
            })?;
            Trajectory::new(times, states, inputs)
        }
        Plant::Quad(params) => quad::simulate_attitude_loop(params, k, x0, x_ref, t_final, dt),
    }
}
