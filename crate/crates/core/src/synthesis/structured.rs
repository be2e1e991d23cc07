//! The data-driven NLP as an [`EqualityProgram`] with a structured damped
//! Newton solve.
//!
//! Decision vector `z = (θ, x_0, …, x_N)`. Constraint `k` touches θ, `x_k`
//! and `x_{k+1}` only, so the model Hessian has a dense θθ block, a θ–X
//! coupling, and a block-tridiagonal X part. The X part is eliminated by a
//! block Cholesky recursion and the step for θ comes from the Schur complement.

use nalgebra::{DMatrix, DVector};

use super::al::{DampedModel, EqualityProgram, SCALE_FLOOR};
use super::constraint::{Evaluator, Layout};
use crate::lqr::CostWeights;


pub(crate) struct NlpProgram<'a> {
    pub layout: Layout,
    /// Samples `y_k`, row-major `(N+1)·p`.
    pub y: Vec<f64>,
    /// Inputs `u_k`, row-major `(N+1)·m`.
    pub u: Vec<f64>,
    pub c: DMatrix<f64>,
    /// `2CᵀC`
    pub ctc2: DMatrix<f64>,
    pub weights: &'a CostWeights,
    pub dt: f64,
    pub samples: usize,
    pub outputs: usize,
}

impl<'a> NlpProgram<'a> {
    pub fn new(
        layout: Layout,
        y: &DMatrix<f64>,
        u: &DMatrix<f64>,
        c: DMatrix<f64>,
        weights: &'a CostWeights,
        dt: f64,
    ) -> Self {
        let ctc2 = c.transpose() * &c * 2.0;
        Self {
            layout,
            y: y.transpose().as_slice().to_vec(),
            u: u.transpose().as_slice().to_vec(),
            outputs: c.nrows(),
            c,
            ctc2,
            weights,
            dt,
            samples: y.nrows(),
        }
    }

    pub fn theta_len(&self) -> usize {
        self.layout.theta_len()
    }

    pub fn dim(&self) -> usize {
        self.theta_len() + self.samples * self.layout.states
    }

    pub fn constraint_count(&self) -> usize {
        self.samples - 1
    }

    fn x<'z>(&self, z: &'z DVector<f64>, k: usize) -> &'z [f64] {
        let n = self.layout.states;
        let off = self.theta_len() + k * n;
        &z.as_slice()[off..off + n]
    }

    fn u_k(&self, k: usize) -> &[f64] {
        let m = self.layout.inputs;
        &self.u[k * m..(k + 1) * m]
    }

    /// `y_k − C x_k`
    fn output_error(&self, z: &DVector<f64>, k: usize) -> DVector<f64> {
        let p = self.outputs;
        let x = DVector::from_column_slice(self.x(z, k));
        DVector::from_column_slice(&self.y[k * p..(k + 1) * p]) - &self.c * x
    }

    pub fn states_matrix(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let n = self.layout.states;
        DMatrix::from_row_slice(self.samples, n, &z.as_slice()[self.theta_len()..])
    }
}

impl EqualityProgram for NlpProgram<'_> {
    type Model = StructuredModel;

    fn objective(&self, z: &DVector<f64>) -> f64 {
        (0..self.samples).map(|k| self.output_error(z, k).norm_squared()).sum()
    }

    fn constraints(&self, z: &DVector<f64>) -> DVector<f64> {
        let eval = Evaluator::new(self.layout, &z.as_slice()[..self.theta_len()], self.weights, self.dt);
        DVector::from_iterator(
            self.constraint_count(),
            (0..self.constraint_count()).map(|k| eval.residual(self.x(z, k), self.x(z, k + 1), self.u_k(k))),
        )
    }

    fn model(&self, z: &DVector<f64>, lambda: &DVector<f64>, rho: f64) -> (DVector<f64>, StructuredModel) {
        let n = self.layout.states;
        let nt = self.theta_len();
        let nc = self.constraint_count();
        let eval = Evaluator::new(self.layout, &z.as_slice()[..nt], self.weights, self.dt);

        let mut j_theta = DMatrix::zeros(nt, nc);
        let mut j_x0 = DMatrix::zeros(n, nc);
        let mut j_x1 = DMatrix::zeros(n, nc);
        let mut grad = DVector::zeros(self.dim());
        let mut weights = vec![0.0; nc];
        for k in 0..nc {
            let mut jt = vec![0.0; nt];
            let mut j0 = vec![0.0; n];
            let mut j1 = vec![0.0; n];
            let h = eval.residual_and_jacobian(self.x(z, k), self.x(z, k + 1), self.u_k(k), &mut jt, &mut j0, &mut j1);
            let w = lambda[k] + rho * h;
            weights[k] = w;
            for i in 0..nt {
                j_theta[(i, k)] = jt[i];
                grad[i] += w * jt[i];
            }
            for i in 0..n {
                j_x0[(i, k)] = j0[i];
                j_x1[(i, k)] = j1[i];
                grad[nt + k * n + i] += w * j0[i];
                grad[nt + (k + 1) * n + i] += w * j1[i];
            }
        }
        for k in 0..self.samples {
            let e = self.output_error(z, k);
            let g = self.c.transpose() * e * (-2.0);
            for i in 0..n {
                grad[nt + k * n + i] += g[i];
            }
        }

        let mut h_tt = &j_theta * j_theta.transpose() * rho;
        let mut h_tx = Vec::with_capacity(self.samples);
        let mut diag = Vec::with_capacity(self.samples);
        let mut upper = Vec::with_capacity(nc);
        for k in 0..self.samples {
            let mut b = DMatrix::zeros(nt, n);
            let mut d = self.ctc2.clone();
            if k < nc {
                let jt = j_theta.column(k);
                let j0 = j_x0.column(k);
                b += jt * j0.transpose() * rho;
                d += j0 * j0.transpose() * rho;
                upper.push(j0 * j_x1.column(k).transpose() * rho);
            }
            if k > 0 {
                let jt = j_theta.column(k - 1);
                let j1 = j_x1.column(k - 1);
                b += jt * j1.transpose() * rho;
                d += j1 * j1.transpose() * rho;
            }
            h_tx.push(b);
            diag.push(d);
        }
        self.add_constraint_curvature(z, &weights, &eval, &mut h_tt, &mut h_tx, &mut diag);
        let largest = diag
            .iter()
            .map(|d| d.diagonal().amax())
            .fold(h_tt.diagonal().amax(), f64::max);
        let floor = (SCALE_FLOOR * largest).max(f64::MIN_POSITIVE);
        (
            grad,
            StructuredModel {
                nt,
                n,
                h_tt,
                h_tx,
                diag,
                upper,
                floor,
            },
        )
    }
}

impl NlpProgram<'_> {
    /// Adds `Σ_k w_k ∇²h_k`, which couples θ, `x_k` and `x_{k+1}` only.
    fn add_constraint_curvature(
        &self,
        z: &DVector<f64>,
        weights: &[f64],
        eval: &Evaluator,
        h_tt: &mut DMatrix<f64>,
        h_tx: &mut [DMatrix<f64>],
        diag: &mut [DMatrix<f64>],
    ) {
        let (n, m) = (self.layout.states, self.layout.inputs);
        let dt = self.dt;
        let layout = self.layout;
        let g = self.weights.r_inv();
        let g_st = g * eval.s.transpose();
        let mut outer_l = DMatrix::<f64>::zeros(n, n);
        let mut outer_s = DMatrix::<f64>::zeros(n, n);
        for (k, &w) in weights.iter().enumerate() {
            let x0 = DVector::from_column_slice(self.x(z, k));
            let x1 = DVector::from_column_slice(self.x(z, k + 1));
            let u = DVector::from_column_slice(self.u_k(k));
            let v0 = &eval.l * &x0;
            let v1 = &eval.l * &x1;
            let gwu = &g_st * &x0 + u;
            outer_l += (&x1 * x1.transpose() - &x0 * x0.transpose()) * w;
            outer_s += &x0 * x0.transpose() * w;

            let (b0, b1) = {
                let (head, tail) = h_tx.split_at_mut(k + 1);
                (&mut head[k], &mut tail[0])
            };
            for i in 0..n {
                for j in 0..=i {
                    let row = layout.l_index(i, j);
                    for l in 0..n {
                        let delta = if j == l { 1.0 } else { 0.0 };
                        b1[(row, l)] += 2.0 * w * (eval.l[(i, l)] * x1[j] + v1[i] * delta);
                        b0[(row, l)] -= 2.0 * w * (eval.l[(i, l)] * x0[j] + v0[i] * delta);
                    }
                }
                for j in 0..m {
                    let row = layout.s_index(i, j);
                    for l in 0..n {
                        let delta = if i == l { gwu[j] } else { 0.0 };
                        b0[(row, l)] -= 2.0 * dt * w * (delta + x0[i] * g_st[(j, l)]);
                    }
                }
            }
            diag[k + 1] += &eval.p * (2.0 * w);
            diag[k] -= (&eval.p + &eval.quad * dt) * (2.0 * w);
        }
        for i in 0..n {
            for j in 0..=i {
                for l in 0..=i {
                    h_tt[(layout.l_index(i, j), layout.l_index(i, l))] += 2.0 * outer_l[(j, l)];
                }
            }
        }
        for i in 0..n {
            for j in 0..m {
                for i2 in 0..n {
                    for l in 0..m {
                        h_tt[(layout.s_index(i, j), layout.s_index(i2, l))] -= 2.0 * dt * outer_s[(i, i2)] * g[(j, l)];
                    }
                }
            }
        }
    }
}

/// Newton model of `Φ` stored by blocks: `2CᵀC ⊕ ρJᵀJ + Σ w_k ∇²h_k`.
pub(crate) struct StructuredModel {
    nt: usize,
    n: usize,
    h_tt: DMatrix<f64>,
    /// θ–x_k coupling blocks, `nt × n`.
    h_tx: Vec<DMatrix<f64>>,
    /// Diagonal X blocks `T_kk`.
    diag: Vec<DMatrix<f64>>,
    /// Super-diagonal X blocks `T_{k,k+1}`.
    upper: Vec<DMatrix<f64>>,
    /// Smallest Marquardt scale.
    floor: f64,
}

fn damp(m: &DMatrix<f64>, mu: f64, floor: f64) -> DMatrix<f64> {
    let mut out = m.clone();
    for i in 0..m.nrows() {
        out[(i, i)] += mu * m[(i, i)].abs().max(floor);
    }
    out
}

/// Refinement passes applied to each damped solve.
const REFINEMENT_STEPS: usize = 3;

type Chol = nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>;

/// Factorization of the damped model for one value of `μ`.
struct Factor {
    /// Cholesky factors of the block-tridiagonal elimination pivots.
    pivots: Vec<Chol>,
    /// `T⁻¹ H_xθ` by blocks, `n × nt` each.
    z: Vec<DMatrix<f64>>,
    schur: Chol,
}

impl StructuredModel {
    fn factor(&self, mu: f64) -> Option<Factor> {
        let blocks = self.diag.len();
        let mut pivots: Vec<Chol> = Vec::with_capacity(blocks);
        for k in 0..blocks {
            let mut s = damp(&self.diag[k], mu, self.floor);
            if k > 0 {
                let u = &self.upper[k - 1];
                s -= u.transpose() * pivots[k - 1].solve(u);
            }
            pivots.push(s.cholesky()?);
        }
        let h_xt: Vec<DMatrix<f64>> = self.h_tx.iter().map(|b| b.transpose()).collect();
        let z = self.solve_tridiagonal(&pivots, &h_xt);
        let mut schur = damp(&self.h_tt, mu, self.floor);
        for k in 0..blocks {
            schur -= &self.h_tx[k] * &z[k];
        }
        let schur = (&schur + schur.transpose()) * 0.5;
        Some(Factor {
            pivots,
            z,
            schur: schur.cholesky()?,
        })
    }

    /// Solves `T Y = R` for the damped block-tridiagonal X part.
    fn solve_tridiagonal(&self, pivots: &[Chol], rhs: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
        let blocks = pivots.len();
        let mut fwd: Vec<DMatrix<f64>> = Vec::with_capacity(blocks);
        for k in 0..blocks {
            let mut r = rhs[k].clone();
            if k > 0 {
                r -= self.upper[k - 1].transpose() * pivots[k - 1].solve(&fwd[k - 1]);
            }
            fwd.push(r);
        }
        let mut out: Vec<DMatrix<f64>> = vec![DMatrix::zeros(0, 0); blocks];
        for k in (0..blocks).rev() {
            let mut r = fwd[k].clone();
            if k + 1 < blocks {
                r -= &self.upper[k] * &out[k + 1];
            }
            out[k] = pivots[k].solve(&r);
        }
        out
    }

    fn apply_factor(&self, f: &Factor, rhs: &DVector<f64>) -> DVector<f64> {
        let (nt, n) = (self.nt, self.n);
        let blocks = self.diag.len();
        let rx: Vec<DMatrix<f64>> = (0..blocks)
            .map(|k| DMatrix::from_column_slice(n, 1, rhs.rows(nt + k * n, n).as_slice()))
            .collect();
        let y = self.solve_tridiagonal(&f.pivots, &rx);
        let mut rt = rhs.rows(0, nt).into_owned();
        for k in 0..blocks {
            rt -= &self.h_tx[k] * y[k].column(0);
        }
        let d_theta = f.schur.solve(&rt);
        let mut d = DVector::zeros(nt + blocks * n);
        d.rows_mut(0, nt).copy_from(&d_theta);
        for k in 0..blocks {
            let dx = y[k].column(0) - &f.z[k] * &d_theta;
            d.rows_mut(nt + k * n, n).copy_from(&dx);
        }
        d
    }

    /// Damped model times `d`.
    fn multiply(&self, d: &DVector<f64>, mu: f64) -> DVector<f64> {
        let (nt, n) = (self.nt, self.n);
        let blocks = self.diag.len();
        let dt = d.rows(0, nt);
        let mut out = DVector::zeros(d.len());
        let mut top = damp(&self.h_tt, mu, self.floor) * dt;
        for k in 0..blocks {
            let dx = d.rows(nt + k * n, n);
            top += &self.h_tx[k] * dx;
            let mut row = self.h_tx[k].transpose() * dt + damp(&self.diag[k], mu, self.floor) * dx;
            if k + 1 < blocks {
                row += &self.upper[k] * d.rows(nt + (k + 1) * n, n);
            }
            if k > 0 {
                row += self.upper[k - 1].transpose() * d.rows(nt + (k - 1) * n, n);
            }
            out.rows_mut(nt + k * n, n).copy_from(&row);
        }
        out.rows_mut(0, nt).copy_from(&top);
        out
    }
}

impl DampedModel for StructuredModel {
    fn solve(&self, grad: &DVector<f64>, mu: f64) -> Option<DVector<f64>> {
        let f = self.factor(mu)?;
        let rhs = -grad;
        let mut d = self.apply_factor(&f, &rhs);
        for _ in 0..REFINEMENT_STEPS {
            let r = &rhs - self.multiply(&d, mu);
            if r.amax() <= f64::EPSILON * rhs.amax() {
                break;
            }
            d += self.apply_factor(&f, &r);
        }
        d.iter().all(|v| v.is_finite()).then_some(d)
    }

    fn curvature(&self, d: &DVector<f64>) -> f64 {
        let (nt, n) = (self.nt, self.n);
        let dt = d.rows(0, nt);
        let mut total = dt.dot(&(&self.h_tt * dt));
        for k in 0..self.diag.len() {
            let dx = d.rows(nt + k * n, n);
            total += 2.0 * dt.dot(&(&self.h_tx[k] * dx)) + dx.dot(&(&self.diag[k] * dx));
            if k < self.upper.len() {
                total += 2.0 * dx.dot(&(&self.upper[k] * d.rows(nt + (k + 1) * n, n)));
            }
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;

    /// Dense assembly of the same model for comparison.
    fn dense(model: &StructuredModel) -> DMatrix<f64> {
        let (nt, n) = (model.nt, model.n);
        let blocks = model.diag.len();
        let dim = nt + blocks * n;
        let mut h = DMatrix::zeros(dim, dim);
        h.view_mut((0, 0), (nt, nt)).copy_from(&model.h_tt);
        for k in 0..blocks {
            h.view_mut((0, nt + k * n), (nt, n)).copy_from(&model.h_tx[k]);
            h.view_mut((nt + k * n, 0), (n, nt)).copy_from(&model.h_tx[k].transpose());
            h.view_mut((nt + k * n, nt + k * n), (n, n)).copy_from(&model.diag[k]);
            if k < model.upper.len() {
                h.view_mut((nt + k * n, nt + (k + 1) * n), (n, n)).copy_from(&model.upper[k]);
                h.view_mut((nt + (k + 1) * n, nt + k * n), (n, n))
                    .copy_from(&model.upper[k].transpose());
            }
        }
        h
    }

    fn two_input_weights() -> CostWeights {
        let r = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.5]);
        CostWeights::new(DMatrix::from_diagonal(&DVector::from_column_slice(&[3.0, 1.0, 0.5, 2.0])), r).unwrap()
    }

    fn test_problem(w: &CostWeights) -> (NlpProgram<'_>, DVector<f64>, DVector<f64>) {
        let m = w.r().nrows();
        let layout = Layout::new(4, m);
        let samples = 12;
        let y = DMatrix::from_fn(samples, 4, |k, i| ((k * 7 + i * 3) as f64 * 0.37).sin());
        let u = DMatrix::from_fn(samples, m, |k, j| (k as f64 * 0.9 + j as f64).cos());
        let prog = NlpProgram::new(layout, &y, &u, DMatrix::identity(4, 4), w, 0.1);
        let mut z = DVector::zeros(prog.dim());
        for i in 0..layout.theta_len() {
            z[i] = 0.2 + 0.05 * i as f64;
        }
        let ys = DVector::from_row_slice(y.transpose().as_slice());
        z.rows_mut(layout.theta_len(), samples * 4).copy_from(&ys.map(|v| v * 1.1));
        let lambda = DVector::from_fn(samples - 1, |k, _| 0.3 - 0.05 * k as f64);
        (prog, z, lambda)
    }

    #[test]
    fn model_hessian_matches_finite_differences() {
        for w in [models::b747_weights(), two_input_weights()] {
            hessian_check(&w);
        }
    }

    fn hessian_check(w: &CostWeights) {
        let (prog, z, lambda) = test_problem(w);
        let rho = 3.0;
        let (_, model) = prog.model(&z, &lambda, rho);
        let h = dense(&model);
        let step = 1e-6;
        for i in 0..prog.dim() {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[i] += step;
            zm[i] -= step;
            let column = (prog.model(&zp, &lambda, rho).0 - prog.model(&zm, &lambda, rho).0) / (2.0 * step);
            let err = (&column - h.column(i)).amax();
            assert!(err <= 1e-6 * column.amax().max(1.0), "column {i}: error {err}");
        }
    }

    #[test]
    fn structured_solve_matches_dense() {
        let w = models::b747_weights();
        let (prog, z, lambda) = test_problem(&w);
        let (grad, model) = prog.model(&z, &lambda, 3.0);
        let mu = 1e2;
        let h = dense(&model);
        let damped = damp(&h, mu, model.floor);
        let Some(d) = model.solve(&grad, mu) else {
            panic!("damped model should factor");
        };
        let expected = damped.clone().lu().solve(&(-&grad)).unwrap();
        assert!((&d - &expected).amax() <= 1e-8 * expected.amax().max(1.0));
        let c = model.curvature(&d);
        assert!((c - d.dot(&(&h * &d))).abs() <= 1e-9 * c.abs().max(1.0));
        let product = model.multiply(&d, mu);
        assert!((&product - &damped * &d).amax() <= 1e-10 * product.amax());
    }
}
