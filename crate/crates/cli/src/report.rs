//! Gain comparison and residual reports.

use std::path::Path;

use nalgebra::{Complex, DMatrix};

use mflqr::dynamics::Trajectory;
use mflqr::io::{format_f64, push_key_values, push_matrix, write_atomic, Metadata};
use mflqr::lqr::{closed_loop_eigenvalues, is_stabilizing};
use mflqr::{GainMatrix, LtiSystem};

/// Entries of `K_LQR` smaller than this fraction of its largest entry count
/// as structural zeros and get no relative deviation.
pub const ZERO_ENTRY: f64 = 1e-9;

/// Model-free gain against the ARE gain.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub k_mf: DMatrix<f64>,
    pub k_lqr: DMatrix<f64>,
    pub abs_deviation: DMatrix<f64>,
    /// `|ΔK_ij| / |K_LQR_ij|`; NaN on structural zeros of `K_LQR`.
    pub rel_deviation: DMatrix<f64>,
    pub max_rel_deviation: f64,
    /// Row and column of `max_rel_deviation`.
    pub max_rel_entry: (usize, usize),
    pub eig_mf: Vec<Complex<f64>>,
    pub eig_lqr: Vec<Complex<f64>>,
    pub stable_mf: bool,
    pub stable_lqr: bool,
    /// RMS of the state difference between the two closed-loop runs.
    pub rms_difference: f64,
    /// RMS state magnitude of the ARE closed-loop run.
    pub rms_state: f64,
}

fn rms_rows(m: &DMatrix<f64>) -> f64 {
    (m.norm_squared() / m.nrows().max(1) as f64).sqrt()
}

impl ComparisonReport {
    /// Derives every deviation from the two gains and trajectories.
    pub fn new(
        k_mf: &GainMatrix,
        k_lqr: &GainMatrix,
        model: &LtiSystem,
        traj_mf: &Trajectory,
        traj_lqr: &Trajectory,
    ) -> Self {
        let (a, b) = (k_mf.matrix(), k_lqr.matrix());
        let abs_deviation = (a - b).abs();
        let floor = ZERO_ENTRY * b.amax();
        let rel_deviation = DMatrix::from_fn(b.nrows(), b.ncols(), |i, j| {
            if b[(i, j)].abs() > floor {
                abs_deviation[(i, j)] / b[(i, j)].abs()
            } else {
                f64::NAN
            }
        });
        let mut max_rel_deviation = 0.0;
        let mut max_rel_entry = (0, 0);
        for i in 0..b.nrows() {
            for j in 0..b.ncols() {
                let r = rel_deviation[(i, j)];
                if r > max_rel_deviation {
                    max_rel_deviation = r;
                    max_rel_entry = (i, j);
                }
            }
        }
        let len = traj_mf.len().min(traj_lqr.len());
        let diff = traj_mf.states.rows(0, len) - traj_lqr.states.rows(0, len);
        Self {
            k_mf: a.clone(),
            k_lqr: b.clone(),
            abs_deviation,
            rel_deviation,
            max_rel_deviation,
            max_rel_entry,
            eig_mf: closed_loop_eigenvalues(model, k_mf),
            eig_lqr: closed_loop_eigenvalues(model, k_lqr),
            stable_mf: is_stabilizing(model, k_mf),
            stable_lqr: is_stabilizing(model, k_lqr),
            rms_difference: rms_rows(&diff.into_owned()),
            rms_state: rms_rows(&traj_lqr.states.rows(0, len).into_owned()),
        }
    }

    /// `rms_difference / rms_state`.
    pub fn relative_tracking_difference(&self) -> f64 {
        self.rms_difference / self.rms_state
    }

    /// Largest off-diagonal entry relative to the smallest diagonal one, for
    /// square blocks where each input drives its own axis. Columns beyond the
    /// first `rows` are compared block by block.
    pub fn cross_axis_ratio(k: &DMatrix<f64>) -> f64 {
        let m = k.nrows();
        let mut worst = 0.0f64;
        for block in 0..k.ncols() / m {
            let off = block * m;
            let same = (0..m).map(|i| k[(i, off + i)].abs()).fold(f64::INFINITY, f64::min);
            for i in 0..m {
                for j in 0..m {
                    if i != j {
                        worst = worst.max(k[(i, off + j)].abs() / same);
                    }
                }
            }
        }
        worst
    }

    pub fn write(&self, meta: &Metadata, path: &Path) -> mflqr::Result<()> {
        let mut out = String::from("# model-free versus ARE gain comparison\n");
        push_key_values(&mut out, "meta", meta);
        push_matrix(&mut out, "K_MF", &self.k_mf);
        push_matrix(&mut out, "K_LQR", &self.k_lqr);
        push_matrix(&mut out, "abs_deviation", &self.abs_deviation);
        push_matrix(&mut out, "rel_deviation", &self.rel_deviation);
        push_matrix(&mut out, "eig_MF", &eigen_rows(&self.eig_mf));
        push_matrix(&mut out, "eig_LQR", &eigen_rows(&self.eig_lqr));
        let summary = Metadata::new()
            .with("max_rel_deviation", format_f64(self.max_rel_deviation))
            .with("max_rel_entry", format!("{} {}", self.max_rel_entry.0, self.max_rel_entry.1))
            .with("stable_mf", self.stable_mf)
            .with("stable_lqr", self.stable_lqr)
            .with("rms_difference", format_f64(self.rms_difference))
            .with("rms_state", format_f64(self.rms_state))
            .with("relative_tracking_difference", format_f64(self.relative_tracking_difference()));
        push_key_values(&mut out, "summary", &summary);
        write_atomic(path, out.as_bytes())
    }
}

/// Eigenvalues as `re im` rows.
fn eigen_rows(eigs: &[Complex<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(eigs.len(), 2, |i, j| if j == 0 { eigs[i].re } else { eigs[i].im })
}

/// One named check of `verify-lemmas`.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            limit,
        }
    }

    pub fn passed(&self) -> bool {
        self.value <= self.limit
    }
}

pub fn write_checks(checks: &[Check], meta: &Metadata, path: &Path) -> mflqr::Result<()> {
    let mut out = String::from("# identity checks: value, limit, pass\n");
    push_key_values(&mut out, "meta", meta);
    out.push_str("[checks]\n");
    for c in checks {
        out.push_str(&format!(
            "{} = {} {} {}\n",
            c.name,
            format_f64(c.value),
            format_f64(c.limit),
            if c.passed() { "pass" } else { "FAIL" }
        ));
    }
    write_atomic(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use mflqr::dynamics::simulate_lti;
    use mflqr::lqr::{lqr_gain, solve_are};
    use mflqr::models;
    use nalgebra::DVector;

    fn run(sys: &LtiSystem, k: &GainMatrix) -> Trajectory {
        let x0 = DVector::from_vec(vec![0.1, 0.0, 0.0, 0.1]);
        let closed = LtiSystem::full_state(sys.a() - sys.b() * k.matrix(), DMatrix::zeros(4, 1)).unwrap();
        simulate_lti(&closed, &x0, &|_| DVector::zeros(1), 5.0, 0.01).unwrap()
    }

    #[test]
    fn identical_gains_have_zero_deviation() {
        let sys = models::b747_lateral();
        let w = models::b747_weights();
        let k = lqr_gain(&solve_are(&sys, &w).unwrap(), &sys, &w).unwrap();
        let t = run(&sys, &k);
        let r = ComparisonReport::new(&k, &k, &sys, &t, &t);
        assert_eq!(r.abs_deviation.amax(), 0.0);
        assert_eq!(r.max_rel_deviation, 0.0);
        assert_eq!(r.rms_difference, 0.0);
        assert!(r.stable_mf && r.stable_lqr);
    }

    #[test]
    fn published_gains_differ_most_in_yaw_rate() {
        let sys = models::b747_lateral();
        let mf = GainMatrix::new(DMatrix::from_row_slice(1, 4, &models::B747_MODEL_FREE_GAIN));
        let lqr = GainMatrix::new(DMatrix::from_row_slice(1, 4, &models::B747_LQR_GAIN));
        let r = ComparisonReport::new(&mf, &lqr, &sys, &run(&sys, &mf), &run(&sys, &lqr));
        assert_eq!(r.max_rel_entry, (0, 1));
        // |−6.6657 + 7.4703| / 7.4703
        assert!((r.max_rel_deviation - 0.8046 / 7.4703).abs() < 1e-12);
        assert!(r.stable_mf && r.stable_lqr);
    }

    #[test]
    fn zero_gain_on_unstable_plant_is_flagged() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 1.0, 0.0, -1.0]);
        let sys = LtiSystem::full_state(a, DMatrix::from_column_slice(2, 1, &[0.0, 1.0])).unwrap();
        let w = mflqr::CostWeights::diagonal(&[1.0, 1.0], &[1.0]).unwrap();
        let k = lqr_gain(&solve_are(&sys, &w).unwrap(), &sys, &w).unwrap();
        let zero = GainMatrix::zeros(1, 2);
        let t = Trajectory::new(vec![0.0], DMatrix::zeros(1, 2), DMatrix::zeros(1, 1)).unwrap();
        let r = ComparisonReport::new(&zero, &k, &sys, &t, &t);
        assert!(!r.stable_mf);
        assert!(r.stable_lqr);
    }

    #[test]
    fn cross_axis_ratio_of_diagonal_blocks() {
        let k = DMatrix::from_row_slice(2, 4, &[30.0, 0.3, 3.0, 0.0, -0.6, 30.0, 0.0, 3.0]);
        assert!((ComparisonReport::cross_axis_ratio(&k) - 0.02).abs() < 1e-15);
    }
}
