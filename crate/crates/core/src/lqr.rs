//! Continuous-time LQR ground truth: Riccati solution, optimal gain, and the
//! quadratic value / Hamiltonian evaluations used to cross-check data-driven
//! results.

use nalgebra::{Complex, DMatrix, DVector};

use crate::linalg::{
    complex_rank, is_hurwitz, is_psd, is_symmetric, min_symmetric_eigenvalue,
    psd_square_root_factor, solve_lyapunov, spectral_abscissa, symmetrize, to_complex,
};
use crate::{Error, Result};

/// `ẋ = Ax + Bu`, `y = Cx`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
}

impl LtiSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || !a.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "A must be square and non-empty, got {:?}",
                a.shape()
            )));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "B must be {n}×m with m ≥ 1, got {:?}",
                b.shape()
            )));
        }
        if c.ncols() != n || c.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "C must be p×{n} with p ≥ 1, got {:?}",
                c.shape()
            )));
        }
        Ok(Self { a, b, c })
    }

    /// System with the identity observation map.
    pub fn full_state(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        Self::new(a, b, DMatrix::identity(n, n))
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn derivative(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }

    /// Keeps the listed states and inputs (in the given order) and resets C to I.
    pub fn reduce(&self, states: &[usize], inputs: &[usize]) -> Result<Self> {
        let a = DMatrix::from_fn(states.len(), states.len(), |i, j| {
            self.a[(states[i], states[j])]
        });
        let b = DMatrix::from_fn(states.len(), inputs.len(), |i, j| {
            self.b[(states[i], inputs[j])]
        });
        Self::full_state(a, b)
    }
}

/// Running-cost weights `ℓ(x, u) = xᵀMx + uᵀRu`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    m: DMatrix<f64>,
    r: DMatrix<f64>,
    r_inv: DMatrix<f64>,
}

impl CostWeights {
    pub fn new(m: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        if !is_symmetric(&m, 1e-12) || !is_psd(&m) {
            return Err(Error::InvalidInput(
                "state weight M must be symmetric positive semi-definite".into(),
            ));
        }
        if !is_symmetric(&r, 1e-12) {
            return Err(Error::SingularR);
        }
        let r = symmetrize(&r);
        let chol = r.clone().cholesky().ok_or(Error::SingularR)?;
        if min_symmetric_eigenvalue(&r) <= 1e-12 * r.norm().max(1.0) {
            return Err(Error::SingularR);
        }
        let r_inv = chol.inverse();
        Ok(Self {
            m: symmetrize(&m),
            r,
            r_inv,
        })
    }

    pub fn diagonal(m: &[f64], r: &[f64]) -> Result<Self> {
        Self::new(
            DMatrix::from_diagonal(&DVector::from_column_slice(m)),
            DMatrix::from_diagonal(&DVector::from_column_slice(r)),
        )
    }

    pub fn m(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn r_inv(&self) -> &DMatrix<f64> {
        &self.r_inv
    }

    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        Self::new(&self.m * alpha, &self.r * alpha)
    }

    fn check(&self, sys: &LtiSystem) -> Result<()> {
        if self.m.nrows() != sys.states() || self.r.nrows() != sys.inputs() {
            return Err(Error::DimensionMismatch(format!(
                "weights M {:?}, R {:?} do not fit a system with n = {}, m = {}",
                self.m.shape(),
                self.r.shape(),
                sys.states(),
                sys.inputs()
            )));
        }
        Ok(())
    }
}

/// Kernel of the quadratic value function `V(x) = xᵀPx`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueMatrix(DMatrix<f64>);

impl ValueMatrix {
    pub fn new(p: DMatrix<f64>) -> Result<Self> {
        if !is_symmetric(&p, 1e-9) {
            return Err(Error::InvalidInput("value matrix must be symmetric".into()));
        }
        let p = symmetrize(&p);
        if !is_psd(&p) {
            return Err(Error::NoPsdSolution {
                min_eigenvalue: min_symmetric_eigenvalue(&p),
            });
        }
        Ok(Self(p))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }
}

/// State-feedback gain for `u = -Kx`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainMatrix(DMatrix<f64>);

impl GainMatrix {
    pub fn new(k: DMatrix<f64>) -> Self {
        Self(k)
    }

    pub fn zeros(inputs: usize, states: usize) -> Self {
        Self(DMatrix::zeros(inputs, states))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn control(&self, x: &DVector<f64>) -> DVector<f64> {
        -(&self.0 * x)
    }
}

const NK_MAX_ITER: usize = 100;

/// Stabilizing solution of `AᵀP + PA − PBR⁻¹BᵀP + M = 0`.
///
/// Newton–Kleinman iteration. The initial stabilizing gain comes from a
/// spectral-shift continuation: for `α` beyond the spectral abscissa of `A`,
/// `K = 0` stabilizes `A − αI`; the shifted Riccati problem is solved and `α`
/// is walked back to zero, each stage warm-started from the previous gain.
pub fn solve_are(sys: &LtiSystem, w: &CostWeights) -> Result<ValueMatrix> {
    w.check(sys)?;
    check_stabilizable(sys.a(), sys.b())?;
    check_detectable(sys.a(), w.m())?;

    let a = sys.a();
    let b = sys.b();
    let n = sys.states();
    let eye = DMatrix::<f64>::identity(n, n);

    let mut k = DMatrix::zeros(sys.inputs(), n);
    let abscissa = spectral_abscissa(a);
    if abscissa >= 0.0 {
        let mut alpha = abscissa + 1.0;
        k = newton_kleinman(&(a - &eye * alpha), b, w, k)?.1;
        while alpha > 0.0 {
            let mut target = 0.0;
            while !is_hurwitz(&(a - &eye * target - b * &k)) {
                target = 0.5 * (alpha + target);
                if alpha - target < 1e-12 * (1.0 + alpha) {
                    return Err(Error::NoConvergence(
                        "spectral-shift continuation stalled".into(),
                    ));
                }
            }
            alpha = target;
            k = newton_kleinman(&(a - &eye * alpha), b, w, k)?.1;
        }
    }

    let (p, _) = newton_kleinman(a, b, w, k)?;
    let min_eig = min_symmetric_eigenvalue(&p);
    if min_eig < -crate::linalg::PSD_TOL * p.norm().max(1.0) {
        return Err(Error::NoPsdSolution {
            min_eigenvalue: min_eig,
        });
    }
    Ok(ValueMatrix(p))
}

/// Runs Newton–Kleinman from a stabilizing `k0` until the gain stops moving.
fn newton_kleinman(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    w: &CostWeights,
    k0: DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let bt = b.transpose();
    let mut k = k0;
    let mut p = DMatrix::zeros(a.nrows(), a.nrows());
    let mut last_change = f64::INFINITY;
    for iter in 0..NK_MAX_ITER {
        let closed = a - b * &k;
        let q = w.m() + k.transpose() * w.r() * &k;
        p = solve_lyapunov(&closed, &q)?;
        let next = w.r_inv() * &bt * &p;
        let change = (&next - &k).amax();
        k = next;
        if change <= 1e-14 * (1.0 + k.amax()) || (iter > 3 && change >= last_change) {
            // Quadratic convergence ends at round-off; once the update stops
            // shrinking there is nothing left to gain.
            break;
        }
        last_change = change;
    }
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::NoConvergence("Newton–Kleinman diverged".into()));
    }
    Ok((p, k))
}

/// PBH test: rank [A − λI, B] = n at every eigenvalue with Re λ ≥ 0.
pub fn check_stabilizable(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    let n = a.nrows();
    let ac = to_complex(a);
    let bc = to_complex(b);
    for lambda in unstable_eigenvalues(a) {
        let mut pencil = DMatrix::<Complex<f64>>::zeros(n, n + b.ncols());
        pencil
            .view_mut((0, 0), (n, n))
            .copy_from(&(&ac - DMatrix::identity(n, n) * lambda));
        pencil.view_mut((0, n), (n, b.ncols())).copy_from(&bc);
        if complex_rank(&pencil) < n {
            return Err(Error::NotStabilizable {
                eigenvalue: format!("{lambda}"),
            });
        }
    }
    Ok(())
}

/// PBH test on (A, C_M) with `M = C_MᵀC_M`: rank [A − λI; C_M] = n at every
/// eigenvalue with Re λ ≥ 0.
pub fn check_detectable(a: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<()> {
    let n = a.nrows();
    let ac = to_complex(a);
    let cm = to_complex(&psd_square_root_factor(m));
    for lambda in unstable_eigenvalues(a) {
        let mut pencil = DMatrix::<Complex<f64>>::zeros(2 * n, n);
        pencil
            .view_mut((0, 0), (n, n))
            .copy_from(&(&ac - DMatrix::identity(n, n) * lambda));
        pencil.view_mut((n, 0), (n, n)).copy_from(&cm);
        if complex_rank(&pencil) < n {
            return Err(Error::NotDetectable {
                eigenvalue: format!("{lambda}"),
            });
        }
    }
    Ok(())
}

fn unstable_eigenvalues(a: &DMatrix<f64>) -> Vec<Complex<f64>> {
    let scale = a.amax().max(1.0);
    a.complex_eigenvalues()
        .iter()
        .copied()
        .filter(|l| l.re >= -1e-10 * scale)
        .collect()
}

/// `K = R⁻¹BᵀP`.
pub fn lqr_gain(p: &ValueMatrix, sys: &LtiSystem, w: &CostWeights) -> Result<GainMatrix> {
    w.check(sys)?;
    if p.dim() != sys.states() {
        return Err(Error::DimensionMismatch("P does not match A".into()));
    }
    let rhs = sys.b().transpose() * p.matrix();
    let k = w
        .r()
        .clone()
        .cholesky()
        .ok_or(Error::SingularR)?
        .solve(&rhs);
    Ok(GainMatrix(k))
}

/// Frobenius norm of `AᵀP + PA − PBR⁻¹BᵀP + M`.
pub fn are_residual(p: &DMatrix<f64>, sys: &LtiSystem, w: &CostWeights) -> Result<f64> {
    w.check(sys)?;
    if p.shape() != sys.a().shape() {
        return Err(Error::DimensionMismatch("P does not match A".into()));
    }
    let a = sys.a();
    let pb = p * sys.b();
    let res = a.transpose() * p + p * a - &pb * w.r_inv() * pb.transpose() + w.m();
    Ok(res.norm())
}

/// `V(x) = xᵀPx`.
pub fn value(p: &ValueMatrix, x: &DVector<f64>) -> f64 {
    quad_form(p.matrix(), x)
}

/// `xᵀMx + uᵀRu`.
pub fn running_cost(w: &CostWeights, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
    quad_form(w.m(), x) + quad_form(w.r(), u)
}

/// `2xᵀPAx + 2xᵀPBu + xᵀMx + uᵀRu`, the Hamiltonian with costate `∂V/∂x`.
pub fn hamiltonian(
    p: &ValueMatrix,
    sys: &LtiSystem,
    w: &CostWeights,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> f64 {
    let px = p.matrix() * x;
    2.0 * px.dot(&sys.derivative(x, u)) + running_cost(w, x, u)
}

/// All eigenvalues of `A − BK` lie in the open left half-plane.
pub fn is_stabilizing(sys: &LtiSystem, k: &GainMatrix) -> bool {
    if k.matrix().shape() != (sys.inputs(), sys.states()) {
        return false;
    }
    is_hurwitz(&(sys.a() - sys.b() * k.matrix()))
}

/// Eigenvalues of `A − BK`.
pub fn closed_loop_eigenvalues(sys: &LtiSystem, k: &GainMatrix) -> Vec<Complex<f64>> {
    (sys.a() - sys.b() * k.matrix())
        .complex_eigenvalues()
        .iter()
        .copied()
        .collect()
}

pub(crate) fn quad_form(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(m * x))
}
