//! Configuration to library calls: plant models, data generation, synthesis,
//! ARE baselines and closed-loop runs.

use nalgebra::{DMatrix, DVector, Vector4};

use mflqr::dynamics::quad::{attitude_model, simulate_quad, ATTITUDE_INPUTS, ATTITUDE_STATES};
use mflqr::dynamics::{
    chirp_input, doublet_input, multisine, observe, simulate_closed_loop, simulate_lti_substeps, DataSet, NoiseModel,
    Plant, QuadParams, QuadState, Trajectory,
};
use mflqr::io::{Baseline, Metadata};
use mflqr::lqr::{lqr_gain, solve_are};
use mflqr::synthesis::{solve_nlp, SynthesisProblem, SynthesisResult};
use mflqr::{models, GainMatrix, LtiSystem};

use crate::config::{rows_to_matrix, ExcitationSpec, PlantSpec, RunConfig};
use crate::CliError;

/// Input signal over all plant input channels.
pub type Signal = Box<dyn Fn(f64) -> DVector<f64>>;

/// Linear model the gains refer to. For the quadcopter this is the hover
/// linearization reduced to the attitude loop.
pub fn lti_model(cfg: &RunConfig) -> Result<LtiSystem, CliError> {
    Ok(match &cfg.plant {
        PlantSpec::B747 => models::b747_lateral(),
        PlantSpec::Quad => attitude_model(&QuadParams::x500())?,
        PlantSpec::Matrices { a, b, c } => {
            let a = rows_to_matrix(a, "plant.a")?;
            let b = rows_to_matrix(b, "plant.b")?;
            let c = match c {
                Some(c) => rows_to_matrix(c, "plant.c")?,
                None => DMatrix::identity(a.nrows(), a.nrows()),
            };
            LtiSystem::new(a, b, c).map_err(|e| CliError::Parse(format!("[plant] {e}")))?
        }
    })
}

/// Excitation over `m` input channels.
pub fn excitation(spec: &ExcitationSpec, m: usize, duration: f64) -> Result<Signal, CliError> {
    let check = |channel: usize| {
        if channel < m {
            Ok(())
        } else {
            Err(CliError::Parse(format!(
                "[excitation] channel {channel} out of range for {m} input(s)"
            )))
        }
    };
    Ok(match *spec {
        ExcitationSpec::Chirp {
            amplitude,
            f0,
            f1,
            channel,
        } => {
            check(channel)?;
            let c = chirp_input(amplitude, f0, f1, duration);
            Box::new(move |t| {
                let mut v = DVector::zeros(m);
                v[channel] = c.eval(t);
                v
            })
        }
        ExcitationSpec::Doublet {
            amplitude,
            period,
            channel,
        } => {
            check(channel)?;
            if !(period > 0.0) {
                return Err(CliError::Parse("[excitation] doublet period must be positive".into()));
            }
            Box::new(doublet_input(amplitude, period, channel, m, duration))
        }
        ExcitationSpec::Multisine { ref channels } => {
            if channels.len() != m {
                return Err(CliError::Parse(format!(
                    "[excitation] multisine lists {} channel(s), plant has {m} input(s)",
                    channels.len()
                )));
            }
            let sines: Vec<_> = channels
                .iter()
                .map(|tones| multisine(tones.iter().map(|&[a, f]| (a, f)).collect()))
                .collect();
            Box::new(move |t| DVector::from_iterator(m, sines.iter().map(|s| s(t))))
        }
    })
}

/// Open-loop run sampled at the configured rate. For the quadcopter the
/// excitation drives (τ_r, τ_p) on top of hover thrust and the record keeps
/// the attitude states and those two inputs.
pub fn simulate_open_loop(cfg: &RunConfig) -> Result<Trajectory, CliError> {
    let sys = lti_model(cfg)?;
    let t_final = cfg.sampling.duration_s;
    let u = excitation(&cfg.excitation, sys.inputs(), t_final)?;
    let substeps = cfg.substeps()?;
    let h = cfg.sampling.integration_step;
    Ok(match cfg.plant {
        PlantSpec::Quad => {
            let params = QuadParams::x500();
            let hover = params.hover_command();
            let cmd = move |t: f64| {
                let v = u(t);
                hover + Vector4::new(0.0, v[0], v[1], 0.0)
            };
            simulate_quad(&QuadState::level(), &cmd, t_final, h, &params)?
                .select(&ATTITUDE_STATES, &ATTITUDE_INPUTS)
                .decimate(substeps)
        }
        _ => simulate_lti_substeps(&sys, &DVector::zeros(sys.states()), &u, t_final, cfg.sample_period(), substeps)?,
    })
}

pub fn noise_model(cfg: &RunConfig, outputs: usize) -> Result<NoiseModel, CliError> {
    let n = &cfg.noise;
    let model = match &n.covariance {
        Some(rows) => NoiseModel::new(rows_to_matrix(rows, "noise.covariance")?, n.seed),
        None => NoiseModel::isotropic(outputs, n.sigma, n.seed),
    };
    model.map_err(|e| CliError::Parse(format!("[noise] {e}")))
}

/// Simulates and observes the configured experiment.
pub fn generate_dataset(cfg: &RunConfig) -> Result<DataSet, CliError> {
    let sys = lti_model(cfg)?;
    let traj = simulate_open_loop(cfg)?;
    let noise = noise_model(cfg, sys.outputs())?;
    Ok(observe(&traj, sys.c(), &noise)?)
}

/// Runs the data-driven synthesis. A run that stops at the iteration limit is
/// returned with `converged = false`.
pub fn synthesize(cfg: &RunConfig, data: DataSet) -> Result<SynthesisResult, CliError> {
    let sys = lti_model(cfg)?;
    let problem = SynthesisProblem::new(data, cfg.cost_weights()?, sys.c().clone(), cfg.solver_options()?)?;
    Ok(solve_nlp(&problem)?)
}

/// ARE gain and value matrix from the known model.
pub fn baseline(cfg: &RunConfig) -> Result<Baseline, CliError> {
    let sys = lti_model(cfg)?;
    let w = cfg.cost_weights()?;
    let p = solve_are(&sys, &w)?;
    let k = lqr_gain(&p, &sys, &w)?;
    Ok(Baseline {
        k,
        p,
        meta: Metadata::new(),
    })
}

/// Reference for the controlled states: the configured doublets.
pub fn reference(cfg: &RunConfig, n: usize) -> Result<Signal, CliError> {
    let mut parts = Vec::new();
    for d in &cfg.reference.doublets {
        if d.state >= n {
            return Err(CliError::Parse(format!(
                "[reference] doublet state {} out of range for {n} states",
                d.state
            )));
        }
        if !(d.period > 0.0) {
            return Err(CliError::Parse("[reference] doublet period must be positive".into()));
        }
        parts.push(doublet_input(d.amplitude_deg.to_radians(), d.period, d.state, n, d.duration));
    }
    Ok(Box::new(move |t| {
        parts.iter().fold(DVector::zeros(n), |acc, f| acc + f(t))
    }))
}

/// Closed-loop tracking run with `gain`. Quadcopter runs use the nonlinear
/// model and keep the attitude states and (τ_r, τ_p).
pub fn closed_loop(cfg: &RunConfig, gain: &GainMatrix) -> Result<Trajectory, CliError> {
    let sys = lti_model(cfg)?;
    let r = reference(cfg, sys.states())?;
    let (t_final, dt) = (cfg.reference.duration_s, cfg.reference.dt);
    Ok(match cfg.plant {
        PlantSpec::Quad => {
            let x0 = QuadState::level().to_vector();
            simulate_closed_loop(&Plant::Quad(QuadParams::x500()), gain, &x0, &r, t_final, dt)?
                .select(&ATTITUDE_STATES, &ATTITUDE_INPUTS)
        }
        _ => simulate_closed_loop(&Plant::Lti(sys.clone()), gain, &DVector::zeros(sys.states()), &r, t_final, dt)?,
    })
}
