//! WebAssembly bindings for the browser demo: the Riccati gain for chosen
//! weights, a model-free gain from simulated data, and the closed-loop roll
//! doublet response of both.

use nalgebra::{DMatrix, DVector};
use wasm_bindgen::prelude::*;

use mflqr::dynamics::{
    chirp_input, doublet_input, observe, on_channel, simulate_closed_loop, simulate_lti_substeps, NoiseModel, Plant,
};
use mflqr::lqr::{is_stabilizing, lqr_gain, solve_are};
use mflqr::synthesis::{solve_nlp, SolverOptions, SynthesisProblem};
use mflqr::{models, CostWeights, GainMatrix};

const DURATION: f64 = 30.0;
const INTEGRATION_STEP: f64 = 1e-3;

fn js(e: mflqr::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn weights(m: &[f64], r: f64) -> Result<CostWeights, JsError> {
    if m.len() != 4 {
        return Err(JsError::new("M needs four diagonal entries"));
    }
    CostWeights::diagonal(m, &[r]).map_err(js)
}

fn gain(k: &[f64]) -> Result<GainMatrix, JsError> {
    if k.len() != 4 || k.iter().any(|v| !v.is_finite()) {
        return Err(JsError::new("K needs four finite entries"));
    }
    Ok(GainMatrix::new(DMatrix::from_row_slice(1, 4, k)))
}

/// Riccati gain of the 747 lateral model for `M = diag(m)`, `R = r`.
#[wasm_bindgen]
pub fn are_gain(m: &[f64], r: f64) -> Result<Vec<f64>, JsError> {
    let sys = models::b747_lateral();
    let w = weights(m, r)?;
    let p = solve_are(&sys, &w).map_err(js)?;
    Ok(lqr_gain(&p, &sys, &w).map_err(js)?.into_inner().as_slice().to_vec())
}

/// Outcome of one model-free synthesis run.
#[wasm_bindgen]
pub struct Synthesis {
    k: Vec<f64>,
    k_lqr: Vec<f64>,
    converged: bool,
    stable: bool,
    outer_iterations: usize,
    max_violation: f64,
}

#[wasm_bindgen]
impl Synthesis {
    #[wasm_bindgen(getter)]
    pub fn k(&self) -> Vec<f64> {
        self.k.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn k_lqr(&self) -> Vec<f64> {
        self.k_lqr.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn converged(&self) -> bool {
        self.converged
    }

    #[wasm_bindgen(getter)]
    pub fn stable(&self) -> bool {
        self.stable
    }

    #[wasm_bindgen(getter)]
    pub fn outer_iterations(&self) -> usize {
        self.outer_iterations
    }

    #[wasm_bindgen(getter)]
    pub fn max_violation(&self) -> f64 {
        self.max_violation
    }

    /// `‖K − K_LQR‖∞ / ‖K_LQR‖∞`.
    #[wasm_bindgen(getter)]
    pub fn relative_error(&self) -> f64 {
        let worst = self.k.iter().zip(&self.k_lqr).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst / self.k_lqr.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Simulates 30 s of the 747 under the rudder chirp, samples it at `rate_hz`
/// with noise `sigma`, and solves for the gain without using the model.
#[wasm_bindgen]
pub fn synthesize(rate_hz: f64, sigma: f64, seed: u64, m: &[f64], r: f64) -> Result<Synthesis, JsError> {
    if !(rate_hz > 0.0 && rate_hz <= 1.0 / INTEGRATION_STEP) || !(sigma >= 0.0) {
        return Err(JsError::new("rate must be in (0, 1000] Hz and noise non-negative"));
    }
    let dt = 1.0 / rate_hz;
    let substeps = (dt / INTEGRATION_STEP).round().max(1.0) as usize;
    let dt = substeps as f64 * INTEGRATION_STEP;
    let sys = models::b747_lateral();
    let w = weights(m, r)?;
    let chirp = chirp_input(1e-4, 1e-4, 7e-2, DURATION);
    let u = on_channel(1, 0, move |t| chirp.eval(t));
    let traj = simulate_lti_substeps(&sys, &DVector::zeros(4), &u, DURATION, dt, substeps).map_err(js)?;
    let noise = NoiseModel::isotropic(4, sigma, seed).map_err(js)?;
    let data = observe(&traj, &DMatrix::identity(4, 4), &noise).map_err(js)?;
    let problem = SynthesisProblem::full_state(data, w.clone(), SolverOptions::default()).map_err(js)?;
    let result = solve_nlp(&problem).map_err(js)?;
    let k_lqr = are_gain(m, r)?;
    Ok(Synthesis {
        stable: is_stabilizing(&sys, &result.k),
        k: result.k.matrix().as_slice().to_vec(),
        k_lqr,
        converged: result.diagnostics.converged,
        outer_iterations: result.diagnostics.outer_iterations,
        max_violation: result.diagnostics.max_violation,
    })
}

/// Roll angle in degrees, sampled every 0.05 s, under `u = −K(x − x_ref)`
/// for a roll doublet of `amplitude_deg` and `period` seconds.
#[wasm_bindgen]
pub fn roll_response(k: &[f64], amplitude_deg: f64, period: f64, duration: f64) -> Result<Vec<f64>, JsError> {
    if !(period > 0.0 && duration > 0.0 && duration <= 200.0) {
        return Err(JsError::new("period must be positive and duration in (0, 200] s"));
    }
    let k = gain(k)?;
    let reference = doublet_input(amplitude_deg.to_radians(), period, models::B747_ROLL, 4, period);
    let traj = simulate_closed_loop(
        &Plant::Lti(models::b747_lateral()),
        &k,
        &DVector::zeros(4),
        &reference,
        duration,
        0.05,
    )
    .map_err(js)?;
    Ok(traj.states.column(models::B747_ROLL).iter().map(|v| v.to_degrees()).collect())
}
