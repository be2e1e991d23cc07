//! The value-function constraint, its objective, and analytic derivatives.

use nalgebra::{DMatrix, DVector};

use crate::lqr::{CostWeights, ValueMatrix};
use crate::{Error, Result};

/// Packing of the parameter block θ = (lower-triangular L row by row, S row by row).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub states: usize,
    pub inputs: usize,
}

impl Layout {
    pub fn new(states: usize, inputs: usize) -> Self {
        Self { states, inputs }
    }

    /// Number of free entries in L.
    pub fn l_len(&self) -> usize {
        self.states * (self.states + 1) / 2
    }

    pub fn s_len(&self) -> usize {
        self.states * self.inputs
    }

    pub fn theta_len(&self) -> usize {
        self.l_len() + self.s_len()
    }

    /// Position of `L[i][j]`, `j ≤ i`, in θ.
    pub fn l_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i);
        i * (i + 1) / 2 + j
    }

    pub fn s_index(&self, i: usize, j: usize) -> usize {
        self.l_len() + i * self.inputs + j
    }

    pub fn pack(&self, l: &DMatrix<f64>, s: &DMatrix<f64>) -> DVector<f64> {
        let mut theta = DVector::zeros(self.theta_len());
        for i in 0..self.states {
            for j in 0..=i {
                theta[self.l_index(i, j)] = l[(i, j)];
            }
            for j in 0..self.inputs {
                theta[self.s_index(i, j)] = s[(i, j)];
            }
        }
        theta
    }

    pub fn unpack(&self, theta: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.states;
        let l = DMatrix::from_fn(n, n, |i, j| if j <= i { theta[self.l_index(i, j)] } else { 0.0 });
        let s = DMatrix::from_fn(n, self.inputs, |i, j| theta[self.s_index(i, j)]);
        (l, s)
    }
}

/// `(x_{k+1}ᵀPx_{k+1} − x_kᵀPx_k)/dt`.
pub fn dv_forward_euler(p: &ValueMatrix, x_k: &DVector<f64>, x_k1: &DVector<f64>, dt: f64) -> f64 {
    let p = p.matrix();
    (x_k1.dot(&(p * x_k1)) - x_k.dot(&(p * x_k))) / dt
}

/// `g_k = D_k − x_kᵀSR⁻¹Sᵀx_k + x_kᵀMx_k − 2x_kᵀSu_k` with `P = LᵀL`.
pub fn constraint_residual(
    l: &DMatrix<f64>,
    s: &DMatrix<f64>,
    x_k: &DVector<f64>,
    x_k1: &DVector<f64>,
    u_k: &DVector<f64>,
    w: &CostWeights,
    dt: f64,
) -> f64 {
    let v1 = l * x_k1;
    let v0 = l * x_k;
    let st_x = s.transpose() * x_k;
    let dv = (v1.norm_squared() - v0.norm_squared()) / dt;
    dv - st_x.dot(&(w.r_inv() * &st_x)) + x_k.dot(&(w.m() * x_k)) - 2.0 * st_x.dot(u_k)
}

/// `‖Y − CX‖²_F` with samples as rows of `X` and `Y`.
pub fn nlp_objective(x: &DMatrix<f64>, y: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<f64> {
    if x.nrows() != y.nrows() || c.ncols() != x.ncols() || c.nrows() != y.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "objective: X {:?}, Y {:?}, C {:?}",
            x.shape(),
            y.shape(),
            c.shape()
        )));
    }
    Ok((y - x * c.transpose()).norm_squared())
}

/// Nonzero partial derivatives of one constraint `g_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRow {
    pub k: usize,
    /// With respect to θ, in [`Layout`] order.
    pub d_theta: DVector<f64>,
    pub d_x_k: DVector<f64>,
    pub d_x_k1: DVector<f64>,
}

/// Objective gradient (same shape as `X`) and the sparse constraint Jacobian.
#[derive(Debug, Clone, PartialEq)]
pub struct NlpGradients {
    pub objective: DMatrix<f64>,
    pub constraints: Vec<ConstraintRow>,
}

/// Precomputed quantities for evaluating all constraints at fixed (L, S).
pub(crate) struct Evaluator<'a> {
    pub layout: Layout,
    pub l: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub p: DMatrix<f64>,
    /// `S R⁻¹ Sᵀ − M`
    pub quad: DMatrix<f64>,
    pub w: &'a CostWeights,
    pub dt: f64,
}

impl<'a> Evaluator<'a> {
    pub fn new(layout: Layout, theta: &[f64], w: &'a CostWeights, dt: f64) -> Self {
        let (l, s) = layout.unpack(theta);
        let p = l.transpose() * &l;
        let quad = &s * w.r_inv() * s.transpose() - w.m();
        Self {
            layout,
            l,
            s,
            p,
            quad,
            w,
            dt,
        }
    }

    /// Scaled residual `h = dt·g`.
    pub fn residual(&self, x0: &[f64], x1: &[f64], u: &[f64]) -> f64 {
        let n = self.layout.states;
        let mut v1 = 0.0;
        let mut v0 = 0.0;
        let mut q = 0.0;
        for i in 0..n {
            let mut p1 = 0.0;
            let mut p0 = 0.0;
            let mut qq = 0.0;
            for j in 0..n {
                p1 += self.p[(i, j)] * x1[j];
                p0 += self.p[(i, j)] * x0[j];
                qq += self.quad[(i, j)] * x0[j];
            }
            v1 += x1[i] * p1;
            v0 += x0[i] * p0;
            q += x0[i] * qq;
        }
        let mut cross = 0.0;
        for i in 0..n {
            for j in 0..self.layout.inputs {
                cross += x0[i] * self.s[(i, j)] * u[j];
            }
        }
        v1 - v0 - self.dt * (q + 2.0 * cross)
    }

    /// Scaled residual and its partials with respect to θ, `x_k`, `x_{k+1}`.
    pub fn residual_and_jacobian(
        &self,
        x0: &[f64],
        x1: &[f64],
        u: &[f64],
        d_theta: &mut [f64],
        d_x0: &mut [f64],
        d_x1: &mut [f64],
    ) -> f64 {
        let n = self.layout.states;
        let m = self.layout.inputs;
        let dt = self.dt;
        let x0v = DVector::from_column_slice(x0);
        let x1v = DVector::from_column_slice(x1);
        let uv = DVector::from_column_slice(u);
        let v0 = &self.l * &x0v;
        let v1 = &self.l * &x1v;
        let px0 = &self.p * &x0v;
        let px1 = &self.p * &x1v;
        // Gw + u with w = Sᵀx_k
        let gw = self.w.r_inv() * (self.s.transpose() * &x0v);
        let gwu = &gw + &uv;

        for i in 0..n {
            for j in 0..=i {
                d_theta[self.layout.l_index(i, j)] = 2.0 * (v1[i] * x1[j] - v0[i] * x0[j]);
            }
            for j in 0..m {
                d_theta[self.layout.s_index(i, j)] = -2.0 * dt * x0[i] * gwu[j];
            }
        }
        let s_gwu = &self.s * &gwu;
        let mx0 = self.w.m() * &x0v;
        for i in 0..n {
            d_x1[i] = 2.0 * px1[i];
            d_x0[i] = -2.0 * px0[i] - dt * (2.0 * s_gwu[i] - 2.0 * mx0[i]);
        }
        // x0ᵀ(SGSᵀ − M)x0 + 2x0ᵀSu = x0ᵀS(Gw + 2u) − x0ᵀMx0 with Gw from above.
        let q = x0v.dot(&(&self.s * (&gw + &uv * 2.0))) - x0v.dot(&mx0);
        x1v.dot(&px1) - x0v.dot(&px0) - dt * q
    }
}

/// Analytic gradient of `‖Y − CX‖²` with respect to `X` and the partials of
/// each unscaled `g_k` with respect to (θ, `x_k`, `x_{k+1}`).
///
/// `x` and `y` hold samples as rows; `u` holds the inputs the same way.
pub fn nlp_gradients(
    l: &DMatrix<f64>,
    s: &DMatrix<f64>,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    u: &DMatrix<f64>,
    c: &DMatrix<f64>,
    w: &CostWeights,
    dt: f64,
) -> Result<NlpGradients> {
    let n = l.nrows();
    let m = s.ncols();
    if x.ncols() != n || u.nrows() != x.nrows() || u.ncols() != m || s.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "gradients: L {:?}, S {:?}, X {:?}, U {:?}",
            l.shape(),
            s.shape(),
            x.shape(),
            u.shape()
        )));
    }
    nlp_objective(x, y, c)?;
    let layout = Layout::new(n, m);
    let theta = layout.pack(l, s);
    let eval = Evaluator::new(layout, theta.as_slice(), w, dt);
    let objective = -(y - x * c.transpose()) * c * 2.0;

    let xt = x.transpose();
    let ut = u.transpose();
    let mut rows = Vec::with_capacity(x.nrows().saturating_sub(1));
    for k in 0..x.nrows().saturating_sub(1) {
        let mut d_theta = DVector::zeros(layout.theta_len());
        let mut d_x_k = DVector::zeros(n);
        let mut d_x_k1 = DVector::zeros(n);
        eval.residual_and_jacobian(
            xt.column(k).as_slice(),
            xt.column(k + 1).as_slice(),
            ut.column(k).as_slice(),
            d_theta.as_mut_slice(),
            d_x_k.as_mut_slice(),
            d_x_k1.as_mut_slice(),
        );
        rows.push(ConstraintRow {
            k,
            d_theta: d_theta / dt,
            d_x_k: d_x_k / dt,
            d_x_k1: d_x_k1 / dt,
        });
    }
    Ok(NlpGradients {
        objective,
        constraints: rows,
    })
}
