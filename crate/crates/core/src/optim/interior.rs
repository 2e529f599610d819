//! Primal-dual interior point for weighted asymmetric absolute-loss
//! regression (Frisch–Newton with Mehrotra's predictor-corrector).
//!
//! The problem is `min_c Σ_r w_r·φ_{τ_r}(y_r − z_rᵀc)`. It is solved through its
//! dual `max yᵀa` subject to `Zᵀa = 0`, `w_r(τ_r − 1) ≤ a_r ≤ w_r τ_r`, whose
//! Newton systems are `d × d` with `d` the number of coefficients.

use nalgebra::{DMatrix, DVector};

use super::SolveReport;
use crate::data::check::check;
use crate::error::{Error, Result};

const STEP_SHRINK: f64 = 0.99995;
const MAX_STEPS: usize = 200;

/// Coefficients and row duals. `dual[r]` lies in `[w_r(τ_r − 1), w_r τ_r]`
/// and equals `w_r τ_r` (`w_r(τ_r − 1)`) on rows with positive (negative)
/// residual.
#[derive(Debug, Clone)]
pub struct CheckRegressionSolution {
    pub coef: DVector<f64>,
    pub dual: DVector<f64>,
    pub report: SolveReport,
}

/// Solves `min Σ_r w_r·φ_{τ_r}(y_r − z_rᵀc)` to relative duality gap `tol`.
///
/// Rows with zero weight are ignored. `z` must have full column rank on the
/// remaining rows.
pub fn check_regression(z: &DMatrix<f64>, y: &[f64], taus: &[f64], weights: &[f64], tol: f64) -> Result<CheckRegressionSolution> {
    let (rows, d) = z.shape();
    if y.len() != rows || taus.len() != rows || weights.len() != rows {
        return Err(Error::dim("rows of z, y, taus and weights differ"));
    }
    if taus.iter().any(|t| !(*t > 0.0 && *t < 1.0)) || weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(Error::domain("levels must lie in (0, 1) and weights be nonnegative"));
    }
    if !(tol > 0.0) {
        return Err(Error::domain("tolerance must be positive"));
    }
    let keep: Vec<usize> = (0..rows).filter(|&r| weights[r] > 0.0).collect();
    let nk = keep.len();
    if nk < d {
        return Err(Error::domain("fewer weighted rows than coefficients"));
    }
    let zk = z.select_rows(&keep);
    let c = DVector::from_iterator(nk, keep.iter().map(|&r| -y[r]));
    let u = DVector::from_iterator(nk, keep.iter().map(|&r| weights[r]));
    let lower = DVector::from_iterator(nk, keep.iter().map(|&r| weights[r] * (taus[r] - 1.0)));

    // a = x + lower with 0 ≤ x ≤ u; a = 0 is strictly interior and feasible
    let mut x = -&lower;
    let mut s = &u - &x;
    let rhs_b = -zk.tr_mul(&lower);

    let gram = zk.tr_mul(&zk);
    let mut theta = solve_spd(gram, &zk.tr_mul(&c))?;
    let r0 = &c - &zk * &theta;
    let shift = r0.amax().max(1.0) * 1e-2;
    let mut zd = r0.map(|v| v.max(0.0) + shift);
    let mut wd = r0.map(|v| (-v).max(0.0) + shift);

    let mut iterations = 0;
    let mut converged = false;
    let (mut rp_norm, mut rd_norm) = (0.0, 0.0);
    while iterations < MAX_STEPS {
        let gap = x.dot(&zd) + s.dot(&wd);
        let primal_obj = c.dot(&x);
        let rp = &rhs_b - zk.tr_mul(&x);
        let rd = &c - &zk * &theta - &zd + &wd;
        rp_norm = rp.amax();
        rd_norm = rd.amax();
        let scale = 1.0 + primal_obj.abs();
        if gap <= tol * scale && rp_norm <= 1e-8 * (1.0 + u.amax()) && rd_norm <= 1e-8 * (1.0 + c.amax()) {
            converged = true;
            break;
        }
        iterations += 1;

        let q = DVector::from_fn(nk, |r, _| zd[r] / x[r] + wd[r] / s[r]);
        let dinv = q.map(|v| 1.0 / v);
        let mut weighted = zk.clone();
        for (r, mut row) in weighted.row_iter_mut().enumerate() {
            row *= dinv[r];
        }
        let normal = zk.tr_mul(&weighted);
        let chol = factor_spd(normal)?;

        let direction = |rxz: &DVector<f64>, rsw: &DVector<f64>| {
            let rho = DVector::from_fn(nk, |r, _| rxz[r] / x[r] - rsw[r] / s[r] - rd[r]);
            let drho = rho.component_mul(&dinv);
            let dtheta = chol.solve(&(&rp - zk.tr_mul(&drho)));
            let dx = (&zk * &dtheta + &rho).component_mul(&dinv);
            let ds = -&dx;
            let dz = DVector::from_fn(nk, |r, _| (rxz[r] - zd[r] * dx[r]) / x[r]);
            let dw = DVector::from_fn(nk, |r, _| (rsw[r] - wd[r] * ds[r]) / s[r]);
            (dtheta, dx, ds, dz, dw)
        };

        // predictor
        let rxz = -x.component_mul(&zd);
        let rsw = -s.component_mul(&wd);
        let (_, dx_a, ds_a, dz_a, dw_a) = direction(&rxz, &rsw);
        let ap = max_step(&x, &dx_a).min(max_step(&s, &ds_a));
        let ad = max_step(&zd, &dz_a).min(max_step(&wd, &dw_a));
        let gap_aff = (&x + ap * &dx_a).dot(&(&zd + ad * &dz_a)) + (&s + ap * &ds_a).dot(&(&wd + ad * &dw_a));
        let sigma = (gap_aff / gap).clamp(0.0, 1.0).powi(3);
        let mu = sigma * gap / (2 * nk) as f64;

        // corrector
        let rxz = DVector::from_fn(nk, |r, _| mu - x[r] * zd[r] - dx_a[r] * dz_a[r]);
        let rsw = DVector::from_fn(nk, |r, _| mu - s[r] * wd[r] - ds_a[r] * dw_a[r]);
        let (dtheta, dx, ds, dz, dw) = direction(&rxz, &rsw);
        let ap = (STEP_SHRINK * max_step(&x, &dx).min(max_step(&s, &ds))).min(1.0);
        let ad = (STEP_SHRINK * max_step(&zd, &dz).min(max_step(&wd, &dw))).min(1.0);
        x.axpy(ap, &dx, 1.0);
        s.axpy(ap, &ds, 1.0);
        theta.axpy(ad, &dtheta, 1.0);
        zd.axpy(ad, &dz, 1.0);
        wd.axpy(ad, &dw, 1.0);
    }

    let mut dual = DVector::zeros(rows);
    for (pos, &r) in keep.iter().enumerate() {
        dual[r] = x[pos] + lower[pos];
    }
    let coef = -theta;
    let fitted = z * &coef;
    let objective = (0..rows).map(|r| weights[r] * check(taus[r], y[r] - fitted[r])).sum();
    let report = SolveReport { iterations, primal_residual: rp_norm, dual_residual: rd_norm, converged, objective };
    Ok(CheckRegressionSolution { coef, dual, report })
}

/// Largest `α ≤ 1/STEP_SHRINK` with `v + α·dv ≥ 0`.
fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut a = 1.0 / STEP_SHRINK;
    for (vi, di) in v.iter().zip(dv.iter()) {
        if *di < 0.0 {
            a = a.min(-vi / di);
        }
    }
    a
}

fn factor_spd(m: DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let d = m.nrows();
    let ridge = m.diagonal().amax().max(1e-300) * 1e-13;
    let mut m = m;
    for attempt in 0..6 {
        if let Some(ch) = m.clone().cholesky() {
            return Ok(ch);
        }
        for i in 0..d {
            m[(i, i)] += ridge * 100f64.powi(attempt);
        }
    }
    Err(Error::LinearAlgebra("normal equations are not positive definite".into()))
}

fn solve_spd(m: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(factor_spd(m)?.solve(rhs))
}
