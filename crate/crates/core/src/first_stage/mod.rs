//! Sparse first-stage estimators.

mod cqr;
mod lasso;

pub use cqr::{cqr_objective, fit_pcqr, fit_plad, fit_pqr, kkt_check_pcqr, KktOutcome};
pub use lasso::{fit_lasso, fit_lasso_warm, lasso_objective, scaled_lasso};


use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::{empirical_quantiles, Dataset, QuantileGrid};
use crate::error::{Error, Result};
use crate::optim::SolveReport;

/// Entries at or below this magnitude count as zero.
pub const NONZERO_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    Pcqr,
    Pqr { tau: f64 },
    Plad,
    Lasso,
    TruncatedPcqr { s: usize },
    TruncatedPlad { s: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstStageFit {
    pub beta_hat: DVector<f64>,
    /// One intercept per quantile level; empty for the Lasso.
    pub b_hat: Vec<f64>,
    pub lambda: f64,
    pub method: Method,
    pub report: SolveReport,
}

impl FirstStageFit {
    /// Indices of entries above [`NONZERO_THRESHOLD`].
    pub fn support(&self) -> Vec<usize> {
        self.beta_hat
            .iter()
            .enumerate()
            .filter(|(_, v)| v.abs() > NONZERO_THRESHOLD)
            .map(|(j, _)| j)
            .collect()
    }

    pub fn sparsity(&self) -> usize {
        self.support().len()
    }
}

/// Penalty levels for the first-stage fits.
///
/// Quantile fits use `quantile_constant·√(log p)/n`, the scaled Lasso uses
/// `scaled_lasso_constant·√(2 log p)/n`, and the Lasso uses
/// `lasso_constant·σ̂·√(2 log p)/n` on the averaged `(2n)⁻¹‖y − Xβ‖²` scale,
/// i.e. `2n` times that on the unnormalized scale of [`fit_lasso`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PenaltyRule {
    pub quantile_constant: f64,
    /// Extra factor for composite fits with `K` levels: the penalty is
    /// multiplied by `K^composite_exponent`. The composite loss adds `K` check
    /// losses, so its gradient at zero grows like `K`; zero reuses the
    /// single-level value.
    pub composite_exponent: f64,
    pub scaled_lasso_constant: f64,
    pub lasso_constant: f64,
}

impl Default for PenaltyRule {
    fn default() -> Self {
        PenaltyRule { quantile_constant: 8.0, composite_exponent: 1.0, scaled_lasso_constant: 10.0, lasso_constant: 4.0 }
    }
}

fn log_p(p: usize) -> f64 {
    (p.max(2) as f64).ln()
}

impl PenaltyRule {
    /// Penalty for a quantile fit with `k` levels.
    pub fn quantile_lambda(&self, n: usize, p: usize, k: usize) -> f64 {
        self.quantile_constant * log_p(p).sqrt() / n as f64 * (k.max(1) as f64).powf(self.composite_exponent)
    }

    pub fn scaled_lasso_lambda(&self, n: usize, p: usize) -> f64 {
        self.scaled_lasso_constant * (2.0 * log_p(p)).sqrt() / n as f64
    }

    /// Penalty on the unnormalized scale `‖y − Xβ‖² + λ‖β‖₁`.
    pub fn lasso_lambda(&self, n: usize, p: usize, sigma_hat: f64) -> f64 {
        2.0 * n as f64 * self.lasso_constant * sigma_hat * (2.0 * log_p(p)).sqrt() / n as f64
    }
}

/// Intercepts as empirical quantiles of `y − Xβ`.
pub fn derive_b_from_beta(data: &Dataset, beta: &DVector<f64>, grid: &QuantileGrid) -> Result<Vec<f64>> {
    if beta.len() != data.p() {
        return Err(Error::dim(format!("beta has length {}, expected {}", beta.len(), data.p())));
    }
    let r = data.residuals(beta);
    empirical_quantiles(r.as_slice(), grid)
}

/// Keeps the `s` largest entries in magnitude, lower index first on ties.
pub fn truncate_to_s(fit: &FirstStageFit, s: usize) -> Result<FirstStageFit> {
    let p = fit.beta_hat.len();
    if s == 0 || s > p {
        return Err(Error::domain(format!("truncation level {s} outside 1..={p}")));
    }
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| fit.beta_hat[b].abs().total_cmp(&fit.beta_hat[a].abs()).then(a.cmp(&b)));
    let mut beta = DVector::zeros(p);
    for &j in &order[..s] {
        beta[j] = fit.beta_hat[j];
    }
    let method = match fit.method {
        Method::Plad | Method::TruncatedPlad { .. } => Method::TruncatedPlad { s },
        _ => Method::TruncatedPcqr { s },
    };
    Ok(FirstStageFit { beta_hat: beta, method, ..fit.clone() })
}
