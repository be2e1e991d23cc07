//! Small dense helpers shared by the Riccati solver and the synthesis code.

use nalgebra::{Complex, DMatrix, DVector};

use crate::{Error, Result};

/// Relative tolerance for treating a symmetric matrix as positive semi-definite.
pub const PSD_TOL: f64 = 1e-9;

/// Relative singular-value threshold used for numerical rank decisions.
pub const RANK_TOL: f64 = 1e-8;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() <= tol * scale
}

pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetrize(m).symmetric_eigenvalues().min()
}

/// `m` is symmetric and its smallest eigenvalue is no lower than `-PSD_TOL·max(1, ‖m‖)`.
pub fn is_psd(m: &DMatrix<f64>) -> bool {
    is_symmetric(m, 1e-9) && min_symmetric_eigenvalue(m) >= -PSD_TOL * m.norm().max(1.0)
}

/// Largest real part over the spectrum of `a`.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn is_hurwitz(a: &DMatrix<f64>) -> bool {
    spectral_abscissa(a) < 0.0
}

/// Solves `AᵀX + XA + Q = 0` for symmetric `Q`.
///
/// Uses the vectorised form `(I ⊗ Aᵀ + Aᵀ ⊗ I) vec X = -vec Q`, which is exact
/// and cheap for the state dimensions handled here.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if !a.is_square() || q.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "Lyapunov: A is {:?}, Q is {:?}",
            a.shape(),
            q.shape()
        )));
    }
    let at = a.transpose();
    let eye = DMatrix::<f64>::identity(n, n);
    let op = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = DVector::from_iterator(n * n, q.iter().map(|v| -v));
    let lu = op.lu();
    let sol = lu.solve(&rhs).ok_or(Error::SingularLyapunov)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularLyapunov);
    }
    let x = DMatrix::from_column_slice(n, n, sol.as_slice());
    Ok(symmetrize(&x))
}

/// Numerical rank of a complex matrix using `RANK_TOL·σ_max`.
pub fn complex_rank(m: &DMatrix<Complex<f64>>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * smax).count()
}

pub fn to_complex(m: &DMatrix<f64>) -> DMatrix<Complex<f64>> {
    m.map(|v| Complex::new(v, 0.0))
}

/// Returns `F` with `M = FᵀF` for a symmetric PSD `M` (negative round-off
/// eigenvalues are clipped to zero).
pub fn psd_square_root_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let n = m.nrows();
    let mut f = DMatrix::zeros(n, n);
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        for j in 0..n {
            f[(i, j)] = s * eig.eigenvectors[(j, i)];
        }
    }
    f
}

/// Projects a symmetric matrix onto the PSD cone, lifting eigenvalues to at
/// least `floor`.
pub fn psd_projection(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let lifted = eig.eigenvalues.map(|l| l.max(floor));
    let v = &eig.eigenvectors;
    symmetrize(&(v * DMatrix::from_diagonal(&lifted) * v.transpose()))
}

/// Lower-triangular `L` with `P = LᵀL` for positive definite `P`.
///
/// With `J` the exchange matrix, `JPJ = GGᵀ` (ordinary Cholesky) gives
/// `P = (JGᵀJ)ᵀ (JGᵀJ)` and `JGᵀJ` is lower triangular.
pub fn lower_factor(p: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = p.nrows();
    let flipped = DMatrix::from_fn(n, n, |i, j| p[(n - 1 - i, n - 1 - j)]);
    let g = symmetrize(&flipped).cholesky()?.unpack();
    Some(DMatrix::from_fn(n, n, |i, j| g[(n - 1 - j, n - 1 - i)]))
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}
