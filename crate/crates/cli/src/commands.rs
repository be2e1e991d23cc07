//! Subcommand implementations. Each writes its artifacts under the output
//! directory and returns a one-line summary.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mflqr::dynamics::{observe, simulate_lti, simulate_lti_substeps, NoiseModel};
use mflqr::io::{
    read_baseline, read_dataset, read_result, write_baseline, write_dataset, write_result, write_trajectory, Metadata,
};
use mflqr::lqr::solve_are;
use mflqr::qlearning::{advantage_integral, check_lemma2, discrete_equivalence_check, semi_group_residual};
use mflqr::{CostWeights, LtiSystem, ValueMatrix};

use crate::config::RunConfig;
use crate::pipeline::{self, Signal};
use crate::report::{write_checks, Check, ComparisonReport};
use crate::CliError;

pub const DATA_FILE: &str = "data.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const RESULT_FILE: &str = "result.txt";
pub const BASELINE_FILE: &str = "baseline.txt";
pub const REPORT_FILE: &str = "comparison.txt";
pub const TRAJ_MF_FILE: &str = "closed_loop_mf.csv";
pub const TRAJ_LQR_FILE: &str = "closed_loop_lqr.csv";
pub const LEMMAS_FILE: &str = "lemmas.txt";

/// Sample periods of the discretisation-order check.
pub const SLOPE_PERIODS: [f64; 4] = [0.04, 0.02, 0.01, 0.005];

const HASH_KEY: &str = "config_hash";

fn meta(cfg: &RunConfig, artifact: &str) -> Metadata {
    Metadata::new().with("artifact", artifact).with(HASH_KEY, cfg.hash())
}

fn check_hash(found: Option<&str>, cfg: &RunConfig, what: &Path, force: bool) -> Result<(), CliError> {
    let expected = cfg.hash();
    match found {
        Some(h) if h == expected => Ok(()),
        _ if force => {
            log::warn!("{}: configuration hash differs, continuing because of --force", what.display());
            Ok(())
        }
        Some(h) => Err(CliError::HashMismatch(format!(
            "{} was produced by configuration {h}, current is {expected}",
            what.display()
        ))),
        None => Err(CliError::HashMismatch(format!("{} carries no configuration hash", what.display()))),
    }
}

fn write_config(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let text = format!("# {HASH_KEY} = {}\n{}", cfg.hash(), cfg.resolved_toml());
    mflqr::io::write_atomic(&out.join(CONFIG_FILE), text.as_bytes())?;
    Ok(())
}

/// Simulates and observes the configured experiment.
pub fn generate(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    let data = pipeline::generate_dataset(cfg)?;
    let path = out.join(DATA_FILE);
    write_dataset(&data, &meta(cfg, "dataset"), &path)?;
    write_config(cfg, out)?;
    Ok(format!("wrote {} ({} samples, dt = {})", path.display(), data.samples(), data.dt))
}

/// Runs synthesis on a data set. The result file is written even when the
/// solver stops without converging; that case returns `NonConvergence`.
pub fn synthesize(cfg: &RunConfig, data_path: &Path, out: &Path, force: bool) -> Result<String, CliError> {
    let (data, data_meta, _) = read_dataset(data_path)?;
    check_hash(data_meta.get(HASH_KEY), cfg, data_path, force)?;
    let result = pipeline::synthesize(cfg, data)?;
    let path = out.join(RESULT_FILE);
    write_result(&result, &meta(cfg, "result"), &path)?;
    let d = &result.diagnostics;
    let summary = format!(
        "wrote {}: K = {:?}, violation {:e}, kkt {:e}, {} outer iterations",
        path.display(),
        result.k.matrix().as_slice(),
        d.max_violation,
        d.kkt_residual,
        d.outer_iterations
    );
    if !d.converged {
        return Err(CliError::NonConvergence(summary));
    }
    Ok(summary)
}

/// ARE gain of the configured model.
pub fn baseline(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    let mut b = pipeline::baseline(cfg)?;
    b.meta = meta(cfg, "baseline");
    let path = out.join(BASELINE_FILE);
    write_baseline(&b, &path)?;
    Ok(format!("wrote {}: K = {:.4}", path.display(), b.k.matrix()))
}

/// Compares a synthesized gain with the ARE baseline in closed loop.
pub fn compare(
    cfg: &RunConfig,
    result_path: &Path,
    baseline_path: &Path,
    out: &Path,
    force: bool,
) -> Result<(String, ComparisonReport), CliError> {
    let result = read_result(result_path)?;
    let (base, _) = read_baseline(baseline_path)?;
    check_hash(result.meta.get(HASH_KEY), cfg, result_path, force)?;
    check_hash(base.meta.get(HASH_KEY), cfg, baseline_path, force)?;
    let (k_mf, k_lqr) = (&result.result.k, &base.k);
    if k_mf.matrix().shape() != k_lqr.matrix().shape() {
        return Err(CliError::Parse(format!(
            "gain shapes differ: {:?} and {:?}",
            k_mf.matrix().shape(),
            k_lqr.matrix().shape()
        )));
    }
    let model = pipeline::lti_model(cfg)?;
    let traj_mf = pipeline::closed_loop(cfg, k_mf);
    let traj_lqr = pipeline::closed_loop(cfg, k_lqr)?;
    // A diverging model-free loop is a finding, not a failure.
    let traj_mf = match traj_mf {
        Ok(t) => t,
        Err(e) => {
            log::warn!("model-free closed loop failed: {e}");
            mflqr::dynamics::Trajectory::new(vec![0.0], DMatrix::zeros(1, model.states()), DMatrix::zeros(1, model.inputs()))?
        }
    };
    let report = ComparisonReport::new(k_mf, k_lqr, &model, &traj_mf, &traj_lqr);
    let m = meta(cfg, "comparison");
    report.write(&m, &out.join(REPORT_FILE))?;
    write_trajectory(&traj_mf, &m, &out.join(TRAJ_MF_FILE))?;
    write_trajectory(&traj_lqr, &m, &out.join(TRAJ_LQR_FILE))?;
    let summary = format!(
        "max relative gain deviation {:.4} at {:?}; closed loop stable: MF {} / LQR {}; RMS tracking difference {:.4} of RMS state",
        report.max_rel_deviation,
        report.max_rel_entry,
        report.stable_mf,
        report.stable_lqr,
        report.relative_tracking_difference()
    );
    Ok((summary, report))
}

/// Random input on `m` channels: three cosines per channel with random
/// amplitudes, frequencies (0.05–2 Hz) and phases.
pub fn random_signal(rng: &mut impl Rng, m: usize, amplitude: f64) -> Signal {
    let sines: Vec<_> = (0..m)
        .map(|_| {
            let tones: Vec<(f64, f64, f64)> = (0..3)
                .map(|_| {
                    (
                        rng.random_range(-1.0..1.0) * amplitude / 3.0,
                        rng.random_range(0.05..2.0),
                        rng.random_range(0.0..std::f64::consts::TAU),
                    )
                })
                .collect();
            move |t: f64| -> f64 {
                tones
                    .iter()
                    .map(|&(a, f, ph)| a * (std::f64::consts::TAU * f * t + ph).cos())
                    .sum()
            }
        })
        .collect();
    Box::new(move |t| DVector::from_iterator(m, sines.iter().map(|s| s(t))))
}

/// `max_k |g_k|` of the true `(P, S = PB)` on noiseless data at each period
/// in [`SLOPE_PERIODS`], and the least-squares log–log slope.
pub fn discretisation_slope(
    sys: &LtiSystem,
    p: &ValueMatrix,
    w: &CostWeights,
    input: &dyn Fn(f64) -> DVector<f64>,
    duration: f64,
) -> Result<(Vec<(f64, f64)>, f64), CliError> {
    let s = p.matrix() * sys.b();
    let mut points = Vec::new();
    for dt in SLOPE_PERIODS {
        let sub = (dt / 1e-3).round() as usize;
        let traj = simulate_lti_substeps(sys, &DVector::zeros(sys.states()), input, duration, dt, sub)?;
        let data = observe(&traj, &DMatrix::identity(sys.states(), sys.states()), &NoiseModel::noiseless(sys.states()))?;
        points.push((dt, discrete_equivalence_check(&data, p, &s, w)?.max_residual));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(d, r)| (d.ln(), r.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok((points, sxy / sxx))
}

/// Identity checks with the ARE value matrix, optionally offset by
/// `corrupt·I` as a negative control.
pub fn verify_checks(cfg: &RunConfig, corrupt: Option<f64>) -> Result<Vec<Check>, CliError> {
    let sys = pipeline::lti_model(cfg)?;
    let w = cfg.cost_weights()?;
    let v = &cfg.verify;
    let n = sys.states();
    let mut p = solve_are(&sys, &w)?.into_inner();
    if let Some(delta) = corrupt {
        p += DMatrix::identity(n, n) * delta;
    }
    let p = ValueMatrix::new(p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(v.seed);
    let mut lemma2: f64 = 0.0;
    let mut min_advantage = f64::INFINITY;
    let mut semi_group: f64 = 0.0;
    for _ in 0..v.signals {
        let u = random_signal(&mut rng, sys.inputs(), v.amplitude);
        let x0 = DVector::from_iterator(n, (0..n).map(|_| rng.random_range(-0.1..0.1)));
        // At least one step is simulated so a zero-length window is valid.
        let traj = simulate_lti(&sys, &x0, &u, v.horizon.max(v.dt), v.dt)?;
        let c = check_lemma2(&p, &traj, &sys, &w, 0.0, v.horizon)?;
        lemma2 = lemma2.max(c.residual() / (1.0 + c.lhs.abs()));
        min_advantage = min_advantage.min(advantage_integral(&traj, &p, &sys, &w, 0.0, v.horizon)?);
        let half = (v.horizon / v.dt / 2.0).floor() * v.dt;
        let q = mflqr::qlearning::q_value(&traj, &w, 0.0, v.horizon)?;
        semi_group = semi_group.max(semi_group_residual(&traj, &w, 0.0, half, v.horizon)? / (1.0 + q));
    }
    let mut checks = vec![
        Check::new("lemma2_relative_residual", lemma2, v.tolerance),
        Check::new("advantage_negative_part", (-min_advantage).max(0.0), v.tolerance),
        Check::new("semi_group_relative_residual", semi_group, v.tolerance),
    ];

    // Euler-discretised identity against the constraint, on the configured data.
    let data = pipeline::generate_dataset(&RunConfig {
        noise: crate::config::NoiseSpec::default(),
        ..cfg.clone()
    })?;
    if data.outputs_dim() == n {
        let s = p.matrix() * sys.b();
        let eq = discrete_equivalence_check(&data, &p, &s, &w)?;
        let scale = 1.0 + eq.advantage_form.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        checks.push(Check::new("euler_equivalence_difference", eq.max_difference / scale, 1e-12));
        let input = pipeline::excitation(&cfg.excitation, sys.inputs(), cfg.sampling.duration_s)?;
        let (_, slope) = discretisation_slope(&sys, &p, &w, &input, cfg.sampling.duration_s)?;
        checks.push(Check::new("residual_order_minus_one", (slope - 1.0).abs(), 0.2));
    }
    Ok(checks)
}

/// Runs [`verify_checks`] and writes the report; any failed check returns
/// `Tolerance` after the report is written.
pub fn verify_lemmas(cfg: &RunConfig, out: &Path, corrupt: Option<f64>) -> Result<String, CliError> {
    let checks = verify_checks(cfg, corrupt)?;
    let mut m = meta(cfg, "lemmas");
    if let Some(delta) = corrupt {
        m.insert("corrupted_p_offset", delta.to_string());
    }
    let path = out.join(LEMMAS_FILE);
    write_checks(&checks, &m, &path)?;
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.passed())
        .map(|c| format!("{} = {:e} > {:e}", c.name, c.value, c.limit))
        .collect();
    if failed.is_empty() {
        Ok(format!("wrote {}: {} checks passed", path.display(), checks.len()))
    } else {
        Err(CliError::Tolerance(failed.join("; ")))
    }
}

/// Status of one step of an end-to-end run.
fn step(name: &str, r: Result<String, CliError>, worst: &mut Option<CliError>) {
    match r {
        Ok(msg) => println!("{name}: {msg}"),
        Err(e) => {
            eprintln!("{name}: {e}");
            if worst.is_none() {
                *worst = Some(e);
            }
        }
    }
}

/// `generate → synthesize → baseline → compare` for one configuration. A
/// non-converged synthesis is still compared; the first failure is returned.
pub fn reproduce(cfg: &RunConfig, out: &Path) -> Result<ComparisonReport, CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::Io(e.to_string()))?;
    let mut first_error = None;
    generate(cfg, out).map(|m| println!("generate: {m}"))?;
    step("synthesize", synthesize(cfg, &out.join(DATA_FILE), out, false), &mut first_error);
    if !out.join(RESULT_FILE).exists() {
        return Err(first_error.unwrap_or_else(|| CliError::Io("no result file".into())));
    }
    baseline(cfg, out).map(|m| println!("baseline: {m}"))?;
    let (summary, report) = compare(cfg, &out.join(RESULT_FILE), &out.join(BASELINE_FILE), out, false)?;
    println!("compare: {summary}");
    println!("K_MF  = {:.4}", report.k_mf);
    println!("K_LQR = {:.4}", report.k_lqr);
    match first_error {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

/// Resolves the default input paths of a subcommand.
pub fn input_path(given: Option<PathBuf>, out: &Path, default: &str) -> PathBuf {
    given.unwrap_or_else(|| out.join(default))
}
