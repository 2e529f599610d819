//! Residual quantiles, densities at those quantiles and the variance
//! constants of the composite quantile score.

use serde::{Deserialize, Serialize};

use crate::data::check::{quantile_sorted, quantiles_sorted};
use crate::data::{NoiseModel, QuantileGrid};
use crate::error::{Error, Result};

pub const DENSITY_FLOOR: f64 = 1e-4;
pub const DENSITY_CEILING: f64 = 1e4;

/// How the densities at the residual quantiles are obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityMode {
    /// Evaluate a known noise density at the estimated quantiles.
    Known { noise: NoiseModel },
    /// Difference quotient of the empirical quantile function at bandwidth `h`.
    Estimated { h: f64 },
}

/// How to pick the density mode for a given fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensitySpec {
    Known { noise: NoiseModel },
    FixedBandwidth { h: f64 },
    /// Bandwidth from [`default_bandwidth`] with the sparsity of the fit.
    DefaultBandwidth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceEstimates {
    pub b_hat: Vec<f64>,
    pub f_hat: Vec<f64>,
    pub theta_hat: f64,
    pub sigma_k: f64,
    pub mode: DensityMode,
    /// Sparsity plugged into the bandwidth rule.
    pub s_used: usize,
}

/// `Σ_{k,k'} min(τ_k, τ_k')·(1 − max(τ_k, τ_k'))`.
pub fn sigma_k_sq(grid: &QuantileGrid) -> f64 {
    let t = grid.taus();
    let mut total = 0.0;
    for &a in t {
        for &b in t {
            total += a.min(b) * (1.0 - a.max(b));
        }
    }
    total
}

fn clamp_density(f: f64) -> f64 {
    if f.is_nan() {
        DENSITY_CEILING
    } else {
        f.clamp(DENSITY_FLOOR, DENSITY_CEILING)
    }
}

/// `f̂_k = 2h / (Q̂(τ_k + h) − Q̂(τ_k − h))` with the lower empirical quantile.
pub fn estimate_density_at_quantiles(residuals: &[f64], grid: &QuantileGrid, h: f64) -> Result<Vec<f64>> {
    if residuals.len() < 2 {
        return Err(Error::domain("need at least two residuals"));
    }
    if !(h > 0.0) {
        return Err(Error::domain("bandwidth must be positive"));
    }
    for &t in grid.taus() {
        if t - h <= 0.0 || t + h >= 1.0 {
            return Err(Error::domain(format!("bandwidth {h} pushes level {t} outside (0, 1); use a smaller h")));
        }
    }
    if residuals.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("residuals must be finite"));
    }
    let mut sorted = residuals.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(grid
        .taus()
        .iter()
        .map(|&t| {
            let gap = quantile_sorted(&sorted, t + h) - quantile_sorted(&sorted, t - h);
            if gap < 1e-12 {
                DENSITY_CEILING
            } else {
                clamp_density(2.0 * h / gap)
            }
        })
        .collect())
}

/// `(max(s, 1)·log(max(p, n)) / n)^{1/6}`, unclipped.
pub fn bandwidth_formula(s_hat: usize, n: usize, p: usize) -> f64 {
    (s_hat.max(1) as f64 * (p.max(n) as f64).ln() / n as f64).powf(1.0 / 6.0)
}

/// [`bandwidth_formula`] clipped so every `τ_k ± h` stays inside (0.01, 0.99).
pub fn default_bandwidth(s_hat: usize, n: usize, p: usize, grid: &QuantileGrid) -> Result<f64> {
    if n == 0 || p == 0 {
        return Err(Error::domain("n and p must be positive"));
    }
    let t = grid.taus();
    let room = (t[0] - 0.01).min(0.99 - t[t.len() - 1]);
    if room <= 0.0 {
        return Err(Error::domain("grid reaches too close to 0 or 1 for any bandwidth"));
    }
    Ok(bandwidth_formula(s_hat, n, p).min(room * (1.0 - 1e-9)))
}

/// Intercepts, densities and `θ̂ = Σ f̂_k` from first-stage residuals.
///
/// `p` and `s_hat` only matter for [`DensitySpec::DefaultBandwidth`].
pub fn estimate_theta(residuals: &[f64], grid: &QuantileGrid, spec: &DensitySpec, p: usize, s_hat: usize) -> Result<NuisanceEstimates> {
    let n = residuals.len();
    if n < 2 {
        return Err(Error::domain("need at least two residuals"));
    }
    if residuals.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("residuals must be finite"));
    }
    if !matches!(spec, DensitySpec::Known { .. }) && n < 10 * grid.len() {
        return Err(Error::domain(format!("density estimation needs at least {} residuals", 10 * grid.len())));
    }
    let mut sorted = residuals.to_vec();
    sorted.sort_by(f64::total_cmp);
    let b_hat = quantiles_sorted(&sorted, grid.taus());
    let (f_hat, mode) = match spec {
        DensitySpec::Known { noise } => {
            noise.validate()?;
            let f = b_hat.iter().map(|&b| clamp_density(noise.density(b))).collect();
            (f, DensityMode::Known { noise: noise.clone() })
        }
        DensitySpec::FixedBandwidth { h } => {
            (estimate_density_at_quantiles(residuals, grid, *h)?, DensityMode::Estimated { h: *h })
        }
        DensitySpec::DefaultBandwidth => {
            let h = default_bandwidth(s_hat, n, p, grid)?;
            (estimate_density_at_quantiles(residuals, grid, h)?, DensityMode::Estimated { h })
        }
    };
    let theta_hat = f_hat.iter().sum();
    Ok(NuisanceEstimates { b_hat, f_hat, theta_hat, sigma_k: sigma_k_sq(grid).sqrt(), mode, s_used: s_hat.max(1) })
}

/// `θ_K = Σ_k f(Q(τ_k))` from the analytic density and quantile function.
pub fn analytic_theta(grid: &QuantileGrid, noise: &NoiseModel) -> Result<f64> {
    let mut total = 0.0;
    for &t in grid.taus() {
        total += noise.density(noise.quantile(t)?);
    }
    Ok(total)
}

/// Asymptotic relative efficiency `σ²·θ_K² / σ_K²` against the square-loss
/// de-biased estimator.
pub fn are_vs_square(grid: &QuantileGrid, noise: &NoiseModel) -> Result<f64> {
    noise.validate()?;
    let var = noise
        .variance()
        .ok_or_else(|| Error::domain(format!("noise {} has no finite variance; efficiency is undefined", noise.label())))?;
    let theta = analytic_theta(grid, noise)?;
    Ok(var * theta * theta / sigma_k_sq(grid))
}
