//! Property tests of the structural invariants.

use nalgebra::{DMatrix, DVector, Vector3, Vector4};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mflqr::dynamics::quad::{mixer_matrix, quad_derivative};
use mflqr::dynamics::{multisine, observe, simulate_lti, DataSet, NoiseModel, QuadParams, QuadState};
use mflqr::io::{read_dataset, write_dataset, Metadata};
use mflqr::linalg::{is_hurwitz, is_psd};
use mflqr::lqr::{are_residual, hamiltonian, lqr_gain, solve_are};
use mflqr::qlearning::{advantage_integral, check_lemma2};
use mflqr::synthesis::{Diagnostics, SynthesisResult};
use mflqr::{CostWeights, LtiSystem};

struct Problem {
    sys: LtiSystem,
    w: CostWeights,
}

fn uniform(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
}

/// Random system with a generic (hence controllable) `B` and positive
/// definite weights.
fn problem(seed: u64, n: usize, m: usize) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = uniform(&mut rng, n, n, 1.0);
    let b = uniform(&mut rng, n, m, 1.0);
    let g = uniform(&mut rng, n, n, 1.0);
    let mw = g.transpose() * g + DMatrix::identity(n, n) * 0.1;
    let r: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..5.0)).collect();
    Problem {
        sys: LtiSystem::full_state(a, b).unwrap(),
        w: CostWeights::new(mw, DMatrix::from_diagonal(&DVector::from_vec(r))).unwrap(),
    }
}

fn diagnostics() -> Diagnostics {
    Diagnostics {
        objective: 0.0,
        max_violation: 0.0,
        max_violation_raw: 0.0,
        kkt_residual: 0.0,
        outer_iterations: 0,
        inner_iterations: 0,
        penalty: 1.0,
        converged: true,
        initialization: "identity".into(),
        data_scale: 1.0,
    }
}

/// One multisine per input channel with seeded frequencies and phases.
fn excitation(seed: u64, m: usize) -> impl Fn(f64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let channels: Vec<_> = (0..m)
        .map(|_| {
            let comps: Vec<(f64, f64)> =
                (0..3).map(|_| (rng.random_range(0.05..0.3), rng.random_range(0.05..2.0))).collect();
            let phase = rng.random_range(0.0..1.0);
            let f = multisine(comps);
            move |t: f64| f(t + phase)
        })
        .collect();
    move |t| DVector::from_iterator(m, channels.iter().map(|c| c(t)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn are_solution_is_stabilizing_and_satisfies_equation(seed in any::<u64>(), n in 1usize..6, m in 1usize..3) {
        let pr = problem(seed, n, m);
        let p = solve_are(&pr.sys, &pr.w).unwrap();
        let k = lqr_gain(&p, &pr.sys, &pr.w).unwrap();
        let pm = p.matrix();
        let scale = 1.0 + pr.w.m().norm() + 2.0 * (pr.sys.a().transpose() * pm).norm()
            + (k.matrix().transpose() * pr.w.r() * k.matrix()).norm();
        prop_assert!(are_residual(pm, &pr.sys, &pr.w).unwrap() <= 1e-9 * scale);
        prop_assert!(is_psd(pm));
        prop_assert!(is_hurwitz(&(pr.sys.a() - pr.sys.b() * k.matrix())));
    }

    #[test]
    fn hamiltonian_exceeds_its_minimum_by_the_input_deviation(seed in any::<u64>(), n in 1usize..5, m in 1usize..3) {
        let pr = problem(seed, n, m);
        let p = solve_are(&pr.sys, &pr.w).unwrap();
        let k = lqr_gain(&p, &pr.sys, &pr.w).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let x = DVector::from_iterator(n, (0..n).map(|_| rng.random_range(-1.0..1.0)));
        let u = DVector::from_iterator(m, (0..m).map(|_| rng.random_range(-1.0..1.0)));
        let u_star = -(k.matrix() * &x);
        let h_star = hamiltonian(&p, &pr.sys, &pr.w, &x, &u_star);
        let dev = &u - &u_star;
        let offset = dev.dot(&(pr.w.r() * &dev));
        let h = hamiltonian(&p, &pr.sys, &pr.w, &x, &u);
        let scale = 1.0 + p.matrix().norm() * (1.0 + pr.sys.a().norm());
        prop_assert!(h_star.abs() <= 1e-9 * scale, "H(x, u*) = {h_star}");
        prop_assert!((h - h_star - offset).abs() <= 1e-9 * (scale + offset));
    }

    #[test]
    fn scaling_weights_scales_value_and_keeps_gain(seed in any::<u64>(), n in 1usize..5, alpha in 0.01f64..100.0) {
        let pr = problem(seed, n, 1);
        let p = solve_are(&pr.sys, &pr.w).unwrap();
        let k = lqr_gain(&p, &pr.sys, &pr.w).unwrap();
        let ws = pr.w.scaled(alpha).unwrap();
        let ps = solve_are(&pr.sys, &ws).unwrap();
        let ks = lqr_gain(&ps, &pr.sys, &ws).unwrap();
        prop_assert!((ps.matrix() - p.matrix() * alpha).norm() <= 1e-7 * alpha * p.matrix().norm());
        prop_assert!((ks.matrix() - k.matrix()).norm() <= 1e-7 * (1.0 + k.matrix().norm()));
    }

    #[test]
    fn factored_value_is_psd(seed in any::<u64>(), n in 1usize..7, m in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = uniform(&mut rng, n, n, 3.0);
        let s = uniform(&mut rng, n, m, 3.0);
        let w = CostWeights::new(DMatrix::identity(n, n), DMatrix::identity(m, m) * 2.0).unwrap();
        let r = SynthesisResult::from_factors(l, s.clone(), DMatrix::zeros(1, n), &w, diagnostics()).unwrap();
        prop_assert!(is_psd(r.p.matrix()));
        prop_assert!((r.k.matrix() - s.transpose() / 2.0).norm() <= 1e-15 * (1.0 + s.norm()));
    }

    #[test]
    fn unclamped_mixer_is_linear(a in prop::array::uniform4(-5.0f64..5.0), b in prop::array::uniform4(-5.0f64..5.0), c in -3.0f64..3.0) {
        let mx = mixer_matrix(&QuadParams::x500());
        let (u, v) = (Vector4::from(a), Vector4::from(b));
        let lhs = mx * (u * c + v);
        let rhs = (mx * u) * c + mx * v;
        prop_assert!((lhs - rhs).norm() <= 1e-12 * (1.0 + lhs.norm()));
    }

    #[test]
    fn quad_energy_is_conserved_without_thrust(
        v in prop::array::uniform3(-5.0f64..5.0),
        att in prop::array::uniform3(-1.2f64..1.2),
        w in prop::array::uniform3(-3.0f64..3.0),
        hover in 200.0f64..800.0,
    ) {
        let params = QuadParams::x500();
        let state = QuadState {
            position: Vector3::zeros(),
            velocity: Vector3::from(v),
            attitude: Vector3::from(att),
            rates: Vector3::from(w),
        };
        // Motors off: kinetic plus potential energy (z down) is constant.
        let d = quad_derivative(&state, &Vector4::zeros(), &params).unwrap().derivative;
        let rate = params.mass * state.velocity.dot(&d.velocity)
            - params.mass * params.gravity * d.position.z
            + state.rates.dot(&(params.inertia() * d.rates));
        prop_assert!(rate.abs() <= 1e-10 * (1.0 + params.mass * 25.0 * params.gravity));
        // Equal speeds give no moment: rotational energy is constant.
        let d = quad_derivative(&state, &Vector4::repeat(hover), &params).unwrap().derivative;
        let rot = state.rates.dot(&(params.inertia() * d.rates));
        prop_assert!(rot.abs() <= 1e-12);
    }

    #[test]
    fn advantage_is_nonnegative(seed in any::<u64>(), n in 1usize..5, m in 1usize..3) {
        let pr = problem(seed, n, m);
        let p = solve_are(&pr.sys, &pr.w).unwrap();
        let u = excitation(seed, m);
        let traj = simulate_lti(&pr.sys, &DVector::zeros(n), &u, 2.0, 1e-2).unwrap();
        for t in [0.0, 0.5, 1.0] {
            prop_assert!(advantage_integral(&traj, &p, &pr.sys, &pr.w, t, 1.0).unwrap() >= 0.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn value_identity_holds_for_any_input(seed in any::<u64>(), n in 1usize..5, m in 1usize..3) {
        let pr = problem(seed, n, m);
        let p = solve_are(&pr.sys, &pr.w).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = DVector::from_iterator(n, (0..n).map(|_| rng.random_range(-0.5..0.5)));
        let u = excitation(seed.wrapping_add(1), m);
        let traj = simulate_lti(&pr.sys, &x0, &u, 2.0, 1e-3).unwrap();
        let c = check_lemma2(&p, &traj, &pr.sys, &pr.w, 0.0, 2.0).unwrap();
        prop_assert!(c.holds(1e-6), "lhs {} rhs {}", c.lhs, c.rhs);
    }

    #[test]
    fn dataset_round_trips_exactly(seed in any::<u64>(), samples in 2usize..40, m in 1usize..3, p in 1usize..5, dt in 1e-4f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let times: Vec<f64> = (0..samples).map(|k| k as f64 * dt).collect();
        let inputs = uniform(&mut rng, samples, m, 1e3);
        let outputs = uniform(&mut rng, samples, p, 1e-6);
        let data = DataSet::new(times, inputs, outputs).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let meta = Metadata::new().with("seed", seed);
        write_dataset(&data, &meta, &path).unwrap();
        let (back, meta_back, _) = read_dataset(&path).unwrap();
        prop_assert_eq!(back, data);
        let expected = seed.to_string();
        prop_assert_eq!(meta_back.get("seed"), Some(expected.as_str()));
    }

    #[test]
    fn observation_noise_is_deterministic_per_seed(seed in any::<u64>(), sigma in 1e-6f64..1.0) {
        let pr = problem(seed, 3, 1);
        let traj = simulate_lti(&pr.sys, &DVector::zeros(3), &excitation(seed, 1), 1.0, 0.01).unwrap();
        let c = DMatrix::identity(3, 3);
        let a = observe(&traj, &c, &NoiseModel::isotropic(3, sigma, seed).unwrap()).unwrap();
        let b = observe(&traj, &c, &NoiseModel::isotropic(3, sigma, seed).unwrap()).unwrap();
        let other = observe(&traj, &c, &NoiseModel::isotropic(3, sigma, seed.wrapping_add(1)).unwrap()).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_ne!(a.outputs, other.outputs);
    }
}
