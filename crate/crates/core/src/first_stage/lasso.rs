use nalgebra::DVector;

use super::{FirstStageFit, Method};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::optim::{soft_threshold_scalar, SolveReport, SolverSettings};

/// `‖y − Xβ‖² + λ‖β‖₁`, without a `1/n` factor.
pub fn lasso_objective(data: &Dataset, lambda: f64, beta: &DVector<f64>) -> f64 {
    data.residuals(beta).norm_squared() + lambda * beta.iter().map(|v| v.abs()).sum::<f64>()
}

/// Lasso by cyclic coordinate descent.
pub fn fit_lasso(data: &Dataset, lambda: f64, settings: &SolverSettings) -> Result<FirstStageFit> {
    fit_lasso_warm(data, lambda, settings, None)
}

/// [`fit_lasso`] started from `warm`.
///
/// Sweeps alternate between the full coordinate set and the current active
/// set; convergence is declared when a full sweep moves every fitted column
/// `X_j·β_j` by at most `tol_primal` in RMS.
pub fn fit_lasso_warm(data: &Dataset, lambda: f64, settings: &SolverSettings, warm: Option<&DVector<f64>>) -> Result<FirstStageFit> {
    settings.validate()?;
    let x = data.x();
    let (n, p) = x.shape();
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::domain("lambda must be finite and nonnegative"));
    }
    if lambda == 0.0 && n < p {
        return Err(Error::domain("unpenalized least squares needs n ≥ p"));
    }
    let mut beta = match warm {
        Some(w) if w.len() == p => w.clone(),
        Some(_) => return Err(Error::dim("warm start has the wrong length")),
        None => DVector::zeros(p),
    };
    let col_sq: Vec<f64> = (0..p).map(|j| x.column(j).norm_squared()).collect();
    let mut r = data.residuals(&beta);
    let rms = (n as f64).sqrt();
    let half = lambda / 2.0;

    let sweep = |beta: &mut DVector<f64>, r: &mut DVector<f64>, coords: &mut dyn Iterator<Item = usize>| -> f64 {
        let mut biggest = 0.0f64;
        for j in coords {
            if col_sq[j] == 0.0 {
                continue;
            }
            let old = beta[j];
            let z = x.column(j).dot(r) + col_sq[j] * old;
            let new = soft_threshold_scalar(half, z) / col_sq[j];
            let delta = new - old;
            if delta != 0.0 {
                r.axpy(-delta, &x.column(j), 1.0);
                beta[j] = new;
                biggest = biggest.max(delta.abs() * col_sq[j].sqrt() / rms);
            }
        }
        biggest
    };

    let tol = settings.tol_primal;
    let mut sweeps = 0;
    let mut last = f64::INFINITY;
    let mut converged = false;
    while sweeps < settings.max_iter {
        sweeps += 1;
        last = sweep(&mut beta, &mut r, &mut (0..p));
        if last <= tol {
            converged = true;
            break;
        }
        let active: Vec<usize> = (0..p).filter(|&j| beta[j] != 0.0).collect();
        while sweeps < settings.max_iter {
            sweeps += 1;
            if sweep(&mut beta, &mut r, &mut active.iter().copied()) <= tol {
                break;
            }
        }
    }
    let report = SolveReport {
        iterations: sweeps,
        primal_residual: last,
        dual_residual: 0.0,
        converged,
        objective: lasso_objective(data, lambda, &beta),
    };
    if !converged {
        return Err(Error::NonConvergence { context: "lasso coordinate descent".into(), report });
    }
    Ok(FirstStageFit { beta_hat: beta, b_hat: Vec::new(), lambda, method: Method::Lasso, report })
}

/// Scaled Lasso: alternates a Lasso fit at penalty `2nσλ̃` with the noise
/// update `σ = ‖y − Xβ‖/√n` until σ moves by less than `1e-6`.
///
/// The returned fit carries the last effective penalty. If σ keeps moving
/// after 100 rounds the last iterate comes back with `converged = false`.
pub fn scaled_lasso(data: &Dataset, lambda_tilde: f64, settings: &SolverSettings) -> Result<(FirstStageFit, f64)> {
    if !(lambda_tilde > 0.0 && lambda_tilde.is_finite()) {
        return Err(Error::domain("lambda_tilde must be positive"));
    }
    const FLOOR: f64 = 1e-8;
    let n = data.n() as f64;
    let mut sigma = (data.y().norm() / n.sqrt()).max(FLOOR);
    let mut fit: Option<FirstStageFit> = None;
    let mut rounds = 0;
    let mut settled = false;
    while rounds < 100 {
        rounds += 1;
        let warm = fit.as_ref().map(|f| f.beta_hat.clone());
        let next = fit_lasso_warm(data, 2.0 * n * sigma * lambda_tilde, settings, warm.as_ref())?;
        let new_sigma = (data.residuals(&next.beta_hat).norm() / n.sqrt()).max(FLOOR);
        fit = Some(next);
        let moved = (new_sigma - sigma).abs();
        sigma = new_sigma;
        if moved < 1e-6 {
            settled = true;
            break;
        }
    }
    let mut fit = fit.expect("at least one round");
    fit.report.converged = settled;
    fit.report.iterations = rounds;
    Ok((fit, sigma))
}
