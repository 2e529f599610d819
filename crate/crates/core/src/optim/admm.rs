use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{Prox, SolveReport, SolverSettings};
use crate::error::{Error, Result};

const RHO_CHECK_EVERY: usize = 50;
const MAX_RHO_CHANGES: usize = 30;
const RHO_BALANCE: f64 = 5.0;

/// A linear map given by its action, its adjoint and its Gram matrix.
pub trait LinearOperator: Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// `out = A·x`
    fn apply(&self, x: &[f64], out: &mut [f64]);
    /// `out = Aᵀ·y`
    fn apply_t(&self, y: &[f64], out: &mut [f64]);
    /// `AᵀA` as a dense matrix.
    fn gram(&self) -> DMatrix<f64>;
}

impl LinearOperator for DMatrix<f64> {
    fn nrows(&self) -> usize {
        self.nrows()
    }
    fn ncols(&self) -> usize {
        self.ncols()
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                for (o, &a) in out.iter_mut().zip(self.column(j).iter()) {
                    *o += a * xj;
                }
            }
        }
    }
    fn apply_t(&self, y: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.column(j).iter().zip(y).map(|(a, b)| a * b).sum();
        }
    }
    fn gram(&self) -> DMatrix<f64> {
        self.tr_mul(self)
    }
}

/// Snapshot handed to an ADMM monitor.
pub struct AdmmIterate<'a> {
    pub iteration: usize,
    pub x: &'a [f64],
    /// Scaled multiplier of the `f` block; `rho · scaled_dual` estimates a
    /// subgradient of `f` at the optimum.
    pub scaled_dual: &'a [f64],
    pub rho: f64,
}

/// `minimize f(A·x + c) + g(x) + ½xᵀPx + qᵀx`.
pub struct Splitting<'a> {
    pub a: &'a dyn LinearOperator,
    pub c: &'a [f64],
    pub f: &'a dyn Prox,
    pub g: Option<&'a dyn Prox>,
    pub p: Option<&'a DMatrix<f64>>,
    pub q: Option<&'a [f64]>,
}

/// ADMM state that depends only on `A`, `P`, the presence of `g` and `ρ`.
/// Building it once lets many right-hand sides share one factorization.
pub struct AdmmKernel<'a> {
    a: &'a dyn LinearOperator,
    p: Option<&'a DMatrix<f64>>,
    with_g: bool,
    rho: f64,
    /// `AᵀA`, plus the identity when `g` is present.
    gram: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl<'a> AdmmKernel<'a> {
    pub fn new(a: &'a dyn LinearOperator, p: Option<&'a DMatrix<f64>>, with_g: bool, rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::domain("rho must be positive"));
        }
        let d = a.ncols();
        let mut gram = a.gram();
        if with_g {
            for i in 0..d {
                gram[(i, i)] += 1.0;
            }
        }
        if let Some(p) = p {
            if p.nrows() != d || p.ncols() != d {
                return Err(Error::dim(format!("P is {}x{}, expected {d}x{d}", p.nrows(), p.ncols())));
            }
        }
        let chol = factor(&gram, p, rho)?;
        Ok(AdmmKernel { a, p, with_g, rho, gram, chol })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Objective value at `x`.
    pub fn objective(&self, x: &[f64], c: &[f64], f: &dyn Prox, g: Option<&dyn Prox>, q: Option<&[f64]>) -> f64 {
        let mut ax = vec![0.0; self.a.nrows()];
        self.a.apply(x, &mut ax);
        for (v, ci) in ax.iter_mut().zip(c) {
            *v += ci;
        }
        let mut val = f.value(&ax);
        if let Some(g) = g {
            val += g.value(x);
        }
        if let Some(p) = self.p {
            let xv = DVector::from_column_slice(x);
            val += 0.5 * xv.dot(&(p * &xv));
        }
        if let Some(q) = q {
            val += q.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
        val
    }

    pub fn solve(
        &self,
        c: &[f64],
        f: &dyn Prox,
        g: Option<&dyn Prox>,
        q: Option<&[f64]>,
        settings: &SolverSettings,
        warm: Option<&[f64]>,
    ) -> Result<(Vec<f64>, SolveReport)> {
        self.solve_monitored(c, f, g, q, settings, warm, None)
    }

    /// Like [`AdmmKernel::solve`], calling `monitor` after every
    /// iteration. When `g` is present the iterate passed to the monitor, and
    /// the one returned, is the copy produced by the proximal map of `g`, so
    /// it carries the exact structure `g` induces (zeros for an ℓ₁ term).
    /// Returning `true` stops the run early; the report then keeps
    /// `converged = false` and the caller decides what the stop means.
    #[allow(clippy::too_many_arguments)]
    pub fn solve_monitored(
        &self,
        c: &[f64],
        f: &dyn Prox,
        g: Option<&dyn Prox>,
        q: Option<&[f64]>,
        settings: &SolverSettings,
        warm: Option<&[f64]>,
        mut monitor: Option<&mut dyn FnMut(&AdmmIterate) -> bool>,
    ) -> Result<(Vec<f64>, SolveReport)> {
        settings.validate()?;
        let m1 = self.a.nrows();
        let d = self.a.ncols();
        if c.len() != m1 {
            return Err(Error::dim(format!("offset has length {}, expected {m1}", c.len())));
        }
        if g.is_some() != self.with_g {
            return Err(Error::domain("kernel was built for a different splitting"));
        }
        if let Some(q) = q {
            if q.len() != d {
                return Err(Error::dim("linear term has the wrong length"));
            }
        }
        let mut rho = self.rho;
        let mut local_chol: Option<Cholesky<f64, Dyn>> = None;
        let mut rho_changes = 0;
        let alpha = settings.over_relaxation;
        let m = m1 + if self.with_g { d } else { 0 };

        let mut x = DVector::zeros(d);
        if let Some(w) = warm {
            if w.len() != d {
                return Err(Error::dim("warm start has the wrong length"));
            }
            x.copy_from_slice(w);
        }
        let mut ax = vec![0.0; m1];
        self.a.apply(x.as_slice(), &mut ax);
        let mut z1: Vec<f64> = ax.iter().zip(c).map(|(a, b)| a + b).collect();
        let mut z2: Vec<f64> = x.as_slice().to_vec();
        let mut u1 = vec![0.0; m1];
        let mut u2 = vec![0.0; d];
        let mut h1 = vec![0.0; m1];
        let mut h2 = vec![0.0; d];
        let mut w1 = vec![0.0; m1];
        let mut w2 = vec![0.0; d];
        let mut z1_old = vec![0.0; m1];
        let mut z2_old = vec![0.0; d];
        let mut tmp_m = vec![0.0; m1];
        let mut tmp_d = vec![0.0; d];
        let mut rhs = DVector::zeros(d);

        let mut report = SolveReport {
            iterations: 0,
            primal_residual: f64::INFINITY,
            dual_residual: f64::INFINITY,
            converged: false,
            objective: f64::NAN,
        };
        for it in 1..=settings.max_iter {
            report.iterations = it;
            for i in 0..m1 {
                tmp_m[i] = z1[i] - c[i] - u1[i];
            }
            self.a.apply_t(&tmp_m, &mut tmp_d);
            for j in 0..d {
                let mut r = rho * tmp_d[j];
                if self.with_g {
                    r += rho * (z2[j] - u2[j]);
                }
                if let Some(q) = q {
                    r -= q[j];
                }
                rhs[j] = r;
            }
            x.copy_from(&rhs);
            local_chol.as_ref().unwrap_or(&self.chol).solve_mut(&mut x);
            self.a.apply(x.as_slice(), &mut ax);

            let mut r2 = 0.0;
            for i in 0..m1 {
                let v = ax[i] + c[i];
                h1[i] = alpha * v + (1.0 - alpha) * z1[i];
                w1[i] = h1[i] + u1[i];
            }
            z1_old.copy_from_slice(&z1);
            f.prox(&w1, 1.0 / rho, &mut z1);
            for i in 0..m1 {
                u1[i] += h1[i] - z1[i];
                let rv = ax[i] + c[i] - z1[i];
                r2 += rv * rv;
            }
            if let Some(g) = g {
                for j in 0..d {
                    h2[j] = alpha * x[j] + (1.0 - alpha) * z2[j];
                    w2[j] = h2[j] + u2[j];
                }
                z2_old.copy_from_slice(&z2);
                g.prox(&w2, 1.0 / rho, &mut z2);
                for j in 0..d {
                    u2[j] += h2[j] - z2[j];
                    let rv = x[j] - z2[j];
                    r2 += rv * rv;
                }
            }
            let primal = (r2 / m as f64).sqrt();
            report.primal_residual = primal;
            if !primal.is_finite() {
                break;
            }
            let balance = settings.adaptive_rho && it % RHO_CHECK_EVERY == 0 && rho_changes < MAX_RHO_CHANGES;
            if primal <= settings.tol_primal || it == settings.max_iter || balance {
                for i in 0..m1 {
                    tmp_m[i] = z1[i] - z1_old[i];
                }
                self.a.apply_t(&tmp_m, &mut tmp_d);
                if self.with_g {
                    for j in 0..d {
                        tmp_d[j] += z2[j] - z2_old[j];
                    }
                }
                let s = rho * (tmp_d.iter().map(|v| v * v).sum::<f64>() / d.max(1) as f64).sqrt();
                report.dual_residual = s;
                if primal <= settings.tol_primal && s <= settings.tol_dual {
                    report.converged = true;
                    break;
                }
                if balance && s > 0.0 {
                    let ratio = primal / s;
                    if !(1.0 / RHO_BALANCE..=RHO_BALANCE).contains(&ratio) {
                        let step = ratio.sqrt().clamp(0.1, 10.0);
                        rho *= step;
                        u1.iter_mut().for_each(|v| *v /= step);
                        u2.iter_mut().for_each(|v| *v /= step);
                        local_chol = Some(factor(&self.gram, self.p, rho)?);
                        rho_changes += 1;
                    }
                }
            }
            if let Some(m) = monitor.as_mut() {
                let current = if self.with_g { &z2[..] } else { x.as_slice() };
                if m(&AdmmIterate { iteration: it, x: current, scaled_dual: &u1, rho }) {
                    break;
                }
            }
        }
        let xs = if self.with_g { z2 } else { x.as_slice().to_vec() };
        report.objective = self.objective(&xs, c, f, g, q);
        Ok((xs, report))
    }
}

fn factor(gram: &DMatrix<f64>, p: Option<&DMatrix<f64>>, rho: f64) -> Result<Cholesky<f64, Dyn>> {
    let mut h = gram * rho;
    if let Some(p) = p {
        h += p;
    }
    Cholesky::new(h).ok_or_else(|| Error::LinearAlgebra("ADMM system matrix is not positive definite".into()))
}

/// One-shot ADMM solve of a [`Splitting`].
pub fn admm_solve(problem: &Splitting, settings: &SolverSettings, warm: Option<&[f64]>) -> Result<(Vec<f64>, SolveReport)> {
    let kernel = AdmmKernel::new(problem.a, problem.p, problem.g.is_some(), settings.rho)?;
    kernel.solve(problem.c, problem.f, problem.g, problem.q, settings, warm)
}
