//! Confidence intervals, Wald-type tests on linear contrasts, single
//! coordinate tests with their power curve, and bootstrap-calibrated
//! simultaneous tests over a group of coordinates.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{Dataset, QuantileGrid};
use crate::decorrelate::{Correction, DebiasedEstimate, DecorrelationMatrix, Variant};
use crate::error::{Error, Result};
use crate::rng::{substream, Purpose};

/// Bootstrap size used when none is given.
pub const DEFAULT_BOOTSTRAP: usize = 1000;

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// `Φ⁻¹(p)`.
pub fn normal_quantile(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}

/// `Φ(x)`.
pub fn normal_cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub j: usize,
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    pub half_width: f64,
}

impl ConfidenceInterval {
    pub fn contains(&self, value: f64) -> bool {
        self.lo <= value && value <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// `β̂^d_j ± z_{1−α/2}·√(var_j/n)`.
pub fn coordinate_ci(est: &DebiasedEstimate, j: usize, alpha: f64) -> Result<ConfidenceInterval> {
    check_alpha(alpha)?;
    let r = est.position(j).ok_or_else(|| Error::domain(format!("coordinate {j} was not de-biased")))?;
    let se = (est.var_diag[r] / est.n as f64).sqrt();
    let half_width = normal_quantile(1.0 - alpha / 2.0) * se;
    let centre = est.beta_d[r];
    Ok(ConfidenceInterval { j, lo: centre - half_width, hi: centre + half_width, level: 1.0 - alpha, half_width })
}

/// Intervals for every de-biased coordinate, in `est.coords` order.
pub fn all_cis(est: &DebiasedEstimate, alpha: f64) -> Result<Vec<ConfidenceInterval>> {
    est.coords.iter().map(|&j| coordinate_ci(est, j, alpha)).collect()
}

/// Rejects `β*_j = 0` when `0` falls outside the interval.
pub fn single_coord_test(est: &DebiasedEstimate, j: usize, alpha: f64) -> Result<bool> {
    let ci = coordinate_ci(est, j, alpha)?;
    let r = est.position(j).expect("checked by coordinate_ci");
    Ok(est.beta_d[r].abs() > ci.half_width)
}

/// Two-sided power `Φ(x − t) + Φ(−x − t)` with
/// `x = a·n^{1/2−γ}·θ_K/σ_K·ω_jj^{−1/2}` and `t = z_{1−α/2}`.
///
/// `omega_jj` is the `j`-th diagonal entry of the inverse population covariance.
pub fn power_gn(alpha: f64, gamma_exp: f64, a: f64, n: usize, theta_k: f64, sigma_k: f64, omega_jj: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if !(omega_jj > 0.0 && theta_k > 0.0 && sigma_k > 0.0) {
        return Err(Error::domain("omega_jj, theta_K and sigma_K must be positive"));
    }
    if !(a >= 0.0) || n == 0 {
        return Err(Error::domain("a must be nonnegative and n positive"));
    }
    let x = a * (n as f64).powf(0.5 - gamma_exp) * theta_k / sigma_k / omega_jj.sqrt();
    let t = normal_quantile(1.0 - alpha / 2.0);
    let p = normal_cdf(x - t) + normal_cdf(-x - t);
    Ok(p.min(1.0))
}

/// Per-coordinate threshold of the box `C_α` with `P(N(0, I_q) ∈ C_α) = 1 − α`.
pub fn box_threshold(alpha: f64, q: usize) -> Result<f64> {
    check_alpha(alpha)?;
    if q == 0 {
        return Err(Error::domain("q must be positive"));
    }
    let per_axis = 1.0 - (1.0 - alpha).powf(1.0 / q as f64);
    Ok(normal_quantile(1.0 - per_axis / 2.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaldResult {
    pub q: DMatrix<f64>,
    pub omega: DVector<f64>,
    /// `√n·(scale²·A)^{−1/2}(Qβ̂^d − ω)` with `A = QMΣ̂MᵀQᵀ`.
    pub standardized: DVector<f64>,
    pub threshold: f64,
    pub reject: bool,
    pub level: f64,
}

/// Wald-type test of `Qβ* = ω` with a box-shaped acceptance region.
///
/// `Q` is `q × p` with full row rank and may only load on de-biased
/// coordinates. `m` must be the matrix `est` was built from.
pub fn wald_test(est: &DebiasedEstimate, m: &DecorrelationMatrix, data: &Dataset, q: &DMatrix<f64>, omega: &DVector<f64>, alpha: f64) -> Result<WaldResult> {
    check_alpha(alpha)?;
    let p = data.p();
    let rows = q.nrows();
    if q.ncols() != p || omega.len() != rows || m.p != p {
        return Err(Error::dim("Q must be q × p and omega of length q"));
    }
    if rows == 0 || rows >= p {
        return Err(Error::domain("need 0 < q < p"));
    }
    if m.indices != est.coords {
        return Err(Error::domain("decorrelation rows do not match the estimate"));
    }
    let sv = q.clone().singular_values();
    let top = sv.max();
    if !(top > 0.0) || sv.min() <= top * 1e-10 * p as f64 {
        return Err(Error::domain("Q is rank deficient"));
    }
    // Q restricted to the de-biased coordinates
    let mut sub = DMatrix::zeros(rows, est.coords.len());
    let mut used = vec![false; p];
    for (c, &j) in est.coords.iter().enumerate() {
        sub.set_column(c, &q.column(j));
        used[j] = true;
    }
    if (0..p).any(|j| !used[j] && q.column(j).amax() != 0.0) {
        return Err(Error::domain("Q loads on coordinates that were not de-biased"));
    }
    let xm = data.x() * m.rows.transpose();
    let n = data.n() as f64;
    let a = &sub * (xm.tr_mul(&xm) / n) * sub.transpose() * (est.scale * est.scale);
    let eig = a.symmetric_eigen();
    let floor = eig.eigenvalues.max().max(0.0) * 1e-12;
    if eig.eigenvalues.iter().any(|&l| !(l > floor)) {
        return Err(Error::LinearAlgebra("contrast covariance is singular".into()));
    }
    let inv_root = &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt())) * eig.eigenvectors.transpose();
    let standardized = inv_root * (&sub * &est.beta_d - omega) * n.sqrt();
    let threshold = box_threshold(alpha, rows)?;
    let reject = standardized.iter().any(|v| v.abs() > threshold);
    Ok(WaldResult { q: q.clone(), omega: omega.clone(), standardized, threshold, reject, level: 1.0 - alpha })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BootstrapMode {
    /// Gaussian multipliers on the per-observation scores.
    MultiplierGaussian,
    /// Scores rebuilt from simulated uniforms; needs no noise density.
    SimulatedPsi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimultaneousTestResult {
    pub group: Vec<usize>,
    pub t_g: f64,
    pub c_alpha: f64,
    pub b: usize,
    pub reject: bool,
    pub mode: BootstrapMode,
    pub two_sided: bool,
    pub level: f64,
    pub seed: u64,
}

/// Flat record for JSON output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRecord {
    pub statistic: f64,
    pub threshold: f64,
    pub reject: bool,
    pub level: f64,
    #[serde(rename = "B")]
    pub b: usize,
    pub seed: u64,
}

impl SimultaneousTestResult {
    pub fn record(&self) -> TestRecord {
        TestRecord { statistic: self.t_g, threshold: self.c_alpha, reject: self.reject, level: self.level, b: self.b, seed: self.seed }
    }
}

/// The `⌈(1−α)B⌉`-th smallest draw.
pub fn bootstrap_threshold(draws: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if draws.is_empty() || draws.iter().any(|v| v.is_nan()) {
        return Err(Error::domain("need at least one draw and no NaN"));
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((1.0 - alpha) * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Group positions in `est` and the matching null values.
fn group_rows(est: &DebiasedEstimate, group: &[usize], beta0: &[f64]) -> Result<Vec<usize>> {
    if group.is_empty() {
        return Err(Error::domain("the group must be nonempty"));
    }
    if beta0.len() != group.len() {
        return Err(Error::dim("one null value per group member is required"));
    }
    group.iter().map(|&j| est.position(j).ok_or_else(|| Error::domain(format!("coordinate {j} was not de-biased")))).collect()
}

fn check_bootstrap(b: usize) -> Result<()> {
    if b == 0 {
        return Err(Error::domain("B must be positive"));
    }
    if b < 200 {
        log::warn!("bootstrap size {b} is below 200; the threshold will be coarse");
    }
    Ok(())
}

/// `max_j √n(β̃^d_j − β0_j)`, or the maximum absolute deviation.
fn group_statistic(est: &DebiasedEstimate, rows: &[usize], beta0: &[f64], two_sided: bool) -> f64 {
    let root_n = (est.n as f64).sqrt();
    rows.iter()
        .zip(beta0)
        .map(|(&r, &b0)| {
            let d = root_n * (est.beta_d[r] - b0);
            if two_sided { d.abs() } else { d }
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `n × |G|` score loadings `X·μ_jᵀ` for the group rows.
fn loadings(m: &DecorrelationMatrix, data: &Dataset, group: &[usize]) -> Result<DMatrix<f64>> {
    if m.p != data.p() {
        return Err(Error::dim("matrix and data disagree on p"));
    }
    let mut rows = DMatrix::zeros(group.len(), m.p);
    for (r, &j) in group.iter().enumerate() {
        let row = m.row(j).ok_or_else(|| Error::domain(format!("coordinate {j} has no decorrelation row")))?;
        rows.set_row(r, &row.transpose());
    }
    Ok(data.x() * rows.transpose())
}

/// Bootstrap maxima of `n^{-1/2}·Σ_i w_i·L_{ij}` over `j`, one weight vector per draw.
fn bootstrap_maxima<F>(load: &DMatrix<f64>, b: usize, two_sided: bool, weights: F) -> Vec<f64>
where
    F: Fn(usize) -> DVector<f64> + Sync,
{
    let root_n = (load.nrows() as f64).sqrt();
    (0..b)
        .into_par_iter()
        .map(|draw| {
            let w = weights(draw);
            let v = load.tr_mul(&w) / root_n;
            v.iter().map(|x| if two_sided { x.abs() } else { *x }).fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn multiplier_test(est: &DebiasedEstimate, m: &DecorrelationMatrix, data: &Dataset, group: &[usize], beta0: &[f64], alpha: f64, b: usize, seed: u64, two_sided: bool) -> Result<SimultaneousTestResult> {
    check_alpha(alpha)?;
    check_bootstrap(b)?;
    if m.variant != Variant::L1Min || est.variant != Variant::L1Min {
        return Err(Error::domain("the multiplier test needs the l1-minimal decorrelation matrix"));
    }
    if est.correction != Correction::CompositeQuantile {
        return Err(Error::domain("the multiplier test needs the composite-quantile correction"));
    }
    let rows = group_rows(est, group, beta0)?;
    let load = loadings(m, data, group)? * est.scale;
    let n = data.n();
    let draws = bootstrap_maxima(&load, b, two_sided, |draw| {
        let mut rng = substream(seed, draw as u64, Purpose::Bootstrap);
        DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
    });
    let t_g = group_statistic(est, &rows, beta0, two_sided);
    let c_alpha = bootstrap_threshold(&draws, alpha)?;
    Ok(SimultaneousTestResult {
        group: group.to_vec(),
        t_g,
        c_alpha,
        b,
        reject: t_g > c_alpha,
        mode: BootstrapMode::MultiplierGaussian,
        two_sided,
        level: 1.0 - alpha,
        seed,
    })
}

/// Tests `β*_G = β0_G` with `T_G = max_{j∈G} √n(β̃^d_j − β0_j)` against the
/// multiplier-bootstrap quantile of `U_G = max_{j∈G} n^{-1/2}·Σ_i (σ_K/θ̂)·μ̃_jᵀX_i·g_i`.
///
/// One-sided in the direction of large estimates. `est` and `m` come from
/// the ℓ₁-minimal matrix; draw `b` uses its own substream of `seed`.
#[allow(clippy::too_many_arguments)]
pub fn simultaneous_test(est: &DebiasedEstimate, m: &DecorrelationMatrix, data: &Dataset, group: &[usize], beta0: &[f64], alpha: f64, b: usize, seed: u64) -> Result<SimultaneousTestResult> {
    multiplier_test(est, m, data, group, beta0, alpha, b, seed, false)
}

/// [`simultaneous_test`] on absolute deviations, so departures in either
/// direction are detected.
#[allow(clippy::too_many_arguments)]
pub fn simultaneous_test_two_sided(est: &DebiasedEstimate, m: &DecorrelationMatrix, data: &Dataset, group: &[usize], beta0: &[f64], alpha: f64, b: usize, seed: u64) -> Result<SimultaneousTestResult> {
    multiplier_test(est, m, data, group, beta0, alpha, b, seed, true)
}

/// `Ψ̃ = Σ_k (τ_k − 1{u ≤ τ_k})`.
pub fn simulated_psi(u: f64, grid: &QuantileGrid) -> f64 {
    grid.taus().iter().map(|&t| t - if u <= t { 1.0 } else { 0.0 }).sum()
}

/// Same statistic as [`simultaneous_test`], calibrated by
/// `V_G = max_{j∈G} n^{-1/2}·Σ_i θ̂⁻¹·μ_jᵀX_i·Ψ̃_i` with `Ψ̃_i` built from
/// simulated uniforms, so no density or noise model enters the threshold.
#[allow(clippy::too_many_arguments)]
pub fn simulated_psi_test(est: &DebiasedEstimate, m: &DecorrelationMatrix, data: &Dataset, grid: &QuantileGrid, group: &[usize], beta0: &[f64], alpha: f64, b: usize, seed: u64) -> Result<SimultaneousTestResult> {
    check_alpha(alpha)?;
    check_bootstrap(b)?;
    if est.correction != Correction::CompositeQuantile {
        return Err(Error::domain("the simulated-score test needs the composite-quantile correction"));
    }
    let rows = group_rows(est, group, beta0)?;
    let load = loadings(m, data, group)? / est.theta_hat;
    let n = data.n();
    let draws = bootstrap_maxima(&load, b, false, |draw| {
        let mut rng = substream(seed, draw as u64, Purpose::SimulatedPsi);
        DVector::from_fn(n, |_, _| simulated_psi(rng.random::<f64>(), grid))
    });
    let t_g = group_statistic(est, &rows, beta0, false);
    let c_alpha = bootstrap_threshold(&draws, alpha)?;
    Ok(SimultaneousTestResult {
        group: group.to_vec(),
        t_g,
        c_alpha,
        b,
        reject: t_g > c_alpha,
        mode: BootstrapMode::SimulatedPsi,
        two_sided: false,
        level: 1.0 - alpha,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::NoiseModel;
    use crate::decorrelate::{build_m, debias_cq, default_gammas};
    use crate::first_stage::{fit_plad, PenaltyRule};
    use crate::nuisance::{estimate_theta, sigma_k_sq, DensitySpec};
    use crate::optim::SolverSettings;
    use proptest::prelude::*;
    use rand::Rng;

    fn fixture(variant: Variant, seed: u64) -> (Dataset, DecorrelationMatrix, DebiasedEstimate) {
        let mut rng = substream(seed, 0, Purpose::Oracle);
        let (n, p) = (120, 8);
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(n, |i, _| x[(i, 0)] - x[(i, 1)] + rng.sample::<f64, _>(StandardNormal));
        let data = Dataset::new(x, y).unwrap();
        let s = SolverSettings::default();
        let fit = fit_plad(&data, PenaltyRule::default().quantile_lambda(n, p, 1), &s).unwrap();
        let grid = QuantileGrid::equispaced(5).unwrap();
        let r = data.residuals(&fit.beta_hat);
        let nu = estimate_theta(r.as_slice(), &grid, &DensitySpec::Known { noise: NoiseModel::gaussian(1.0) }, p, fit.sparsity()).unwrap();
        let m = build_m(&data, &default_gammas(n, p).unwrap(), variant, &s).unwrap();
        let est = debias_cq(&fit, &nu, &m, &data, &grid).unwrap();
        (data, m, est)
    }

    #[test]
    fn normal_quantile_digits() {
        assert!((normal_quantile(0.975) - 1.959964).abs() < 5e-7);
        assert!((normal_cdf(normal_quantile(0.3)) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn interval_arithmetic() {
        let (_, _, mut est) = fixture(Variant::VarianceMin, 1);
        est.var_diag[2] = 0.04 * est.n as f64;
        est.beta_d[2] = 1.5;
        let ci = coordinate_ci(&est, 2, 0.05).unwrap();
        assert!((ci.half_width - 0.392).abs() < 1e-4);
        assert!((ci.lo - (1.5 - ci.half_width)).abs() < 1e-15 && (ci.width() - 2.0 * ci.half_width).abs() < 1e-15);
        assert!(coordinate_ci(&est, 2, 0.0).is_err());
        assert!(coordinate_ci(&est, 99, 0.05).is_err());
        assert_eq!(all_cis(&est, 0.05).unwrap().len(), 8);
    }

    #[test]
    fn single_test_matches_interval() {
        let (_, _, mut est) = fixture(Variant::VarianceMin, 2);
        for j in 0..8 {
            let ci = coordinate_ci(&est, j, 0.05).unwrap();
            assert_eq!(single_coord_test(&est, j, 0.05).unwrap(), !ci.contains(0.0));
        }
        est.beta_d[5] = 0.0;
        assert!(!single_coord_test(&est, 5, 0.05).unwrap());
        // the two strong signals are detected
        assert!(single_coord_test(&est, 0, 0.05).unwrap() && single_coord_test(&est, 1, 0.05).unwrap());
    }

    #[test]
    fn power_limits_and_midpoint() {
        let t = normal_quantile(0.975);
        let at_zero = power_gn(0.05, 0.5, 0.0, 200, 2.0, 1.0, 1.0).unwrap();
        assert!((at_zero - 0.05).abs() < 1e-9, "{at_zero}");
        assert!((1.0 - power_gn(0.05, 0.0, 10.0, 200, 2.0, 1.0, 1.0).unwrap()).abs() < 1e-12);
        // x = t when a·θ/σ = t at γ = 1/2
        let mid = power_gn(0.05, 0.5, t, 200, 1.0, 1.0, 1.0).unwrap();
        assert!((mid - (0.5 + normal_cdf(-2.0 * t))).abs() < 1e-14);
        let mut rng = substream(3, 0, Purpose::Oracle);
        let draws = 2_000_000;
        let hits = (0..draws).filter(|_| (rng.sample::<f64, _>(StandardNormal) + t).abs() > t).count();
        assert!((hits as f64 / draws as f64 - mid).abs() < 1.5e-3);
        assert!(power_gn(0.05, 0.5, 1.0, 200, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn power_is_increasing_in_signal() {
        let mut last = power_gn(0.05, 0.3, 0.0, 400, 2.8, 2.0, 1.1).unwrap();
        for i in 1..200 {
            let next = power_gn(0.05, 0.3, i as f64 * 0.01, 400, 2.8, 2.0, 1.1).unwrap();
            assert!(next > last || next == 1.0, "step {i}");
            last = next;
        }
    }

    #[test]
    fn box_threshold_two_dimensions() {
        let c = box_threshold(0.05, 2).unwrap();
        assert!((c - 2.2365).abs() < 1e-4);
        assert!((box_threshold(0.05, 1).unwrap() - normal_quantile(0.975)).abs() < 1e-12);
        let mut rng = substream(4, 0, Purpose::Oracle);
        let draws = 400_000;
        let inside = (0..draws)
            .filter(|_| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                a.abs() <= c && b.abs() <= c
            })
            .count();
        assert!((inside as f64 / draws as f64 - 0.95).abs() < 1.5e-3);
    }

    #[test]
    fn wald_with_one_row_is_the_interval_test() {
        for seed in 5..9 {
            let (data, m, est) = fixture(Variant::VarianceMin, seed);
            for j in 0..8 {
                let ci = coordinate_ci(&est, j, 0.05).unwrap();
                let q = DMatrix::from_fn(1, 8, |_, k| if k == j { 1.0 } else { 0.0 });
                for omega in [0.0, ci.lo - 1e-3, ci.hi + 1e-3, ci.lo + 1e-3, est.beta_d[j]] {
                    let w = wald_test(&est, &m, &data, &q, &DVector::from_element(1, omega), 0.05).unwrap();
                    assert_eq!(w.reject, !ci.contains(omega), "seed {seed} j {j} omega {omega}");
                }
                let w0 = wald_test(&est, &m, &data, &q, &DVector::zeros(1), 0.05).unwrap();
                assert_eq!(w0.reject, single_coord_test(&est, j, 0.05).unwrap());
            }
        }
    }

    #[test]
    fn wald_rejects_bad_contrasts() {
        let (data, m, est) = fixture(Variant::VarianceMin, 9);
        let dup = DMatrix::from_fn(2, 8, |_, k| if k == 3 { 1.0 } else { 0.0 });
        assert!(wald_test(&est, &m, &data, &dup, &DVector::zeros(2), 0.05).is_err());
        let square = DMatrix::identity(8, 8);
        assert!(wald_test(&est, &m, &data, &square, &DVector::zeros(8), 0.05).is_err());
        let q = DMatrix::from_fn(2, 8, |r, k| if r == k { 1.0 } else { 0.0 });
        assert!(wald_test(&est, &m, &data, &q, &DVector::zeros(3), 0.05).is_err());
        let w = wald_test(&est, &m, &data, &q, &DVector::from_vec(vec![1.0, -1.0]), 0.05).unwrap();
        assert!((w.threshold - 2.2365).abs() < 1e-4);
    }

    #[test]
    fn order_statistic_rule() {
        let draws: Vec<f64> = (1..=100).rev().map(|v| v as f64).collect();
        assert_eq!(bootstrap_threshold(&draws, 0.05).unwrap(), 95.0);
        assert_eq!(bootstrap_threshold(&draws, 0.051).unwrap(), 95.0);
        assert_eq!(bootstrap_threshold(&[3.0, 1.0, 2.0], 0.5).unwrap(), 2.0);
        // degenerate zero multipliers: threshold 0, reject exactly when T > 0
        assert_eq!(bootstrap_threshold(&[0.0], 0.05).unwrap(), 0.0);
        assert!(bootstrap_threshold(&[], 0.05).is_err());
    }

    #[test]
    fn multiplier_test_is_reproducible() {
        let (data, m, est) = fixture(Variant::L1Min, 10);
        let g: Vec<usize> = (2..8).collect();
        let b0 = vec![0.0; 6];
        let a = simultaneous_test(&est, &m, &data, &g, &b0, 0.05, 300, 42).unwrap();
        let b = simultaneous_test(&est, &m, &data, &g, &b0, 0.05, 300, 42).unwrap();
        let c = simultaneous_test(&est, &m, &data, &g, &b0, 0.05, 300, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.c_alpha, c.c_alpha);
        assert_eq!(a.reject, a.t_g > a.c_alpha);
        // a large downward null shift is caught by the one-sided statistic
        let shifted: Vec<f64> = b0.iter().map(|v| v - 1.0).collect();
        assert!(simultaneous_test(&est, &m, &data, &g, &shifted, 0.05, 300, 42).unwrap().reject);
        let up: Vec<f64> = b0.iter().map(|v| v + 1.0).collect();
        assert!(!simultaneous_test(&est, &m, &data, &g, &up, 0.05, 300, 42).unwrap().reject);
        assert!(simultaneous_test_two_sided(&est, &m, &data, &g, &up, 0.05, 300, 42).unwrap().reject);

        let json = serde_json::to_value(a.record()).unwrap();
        for key in ["statistic", "threshold", "reject", "level", "B", "seed"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn multiplier_test_needs_l1_rows() {
        let (data, m, est) = fixture(Variant::VarianceMin, 11);
        assert!(simultaneous_test(&est, &m, &data, &[3], &[0.0], 0.05, 200, 1).is_err());
        let (data, m, est) = fixture(Variant::L1Min, 11);
        assert!(simultaneous_test(&est, &m, &data, &[3, 4], &[0.0], 0.05, 200, 1).is_err());
        assert!(simultaneous_test(&est, &m, &data, &[], &[], 0.05, 200, 1).is_err());
        assert!(simultaneous_test(&est, &m, &data, &[3], &[0.0], 0.05, 0, 1).is_err());
    }

    #[test]
    fn simulated_scores() {
        let median = QuantileGrid::median();
        assert_eq!(simulated_psi(0.3, &median), -0.5);
        assert_eq!(simulated_psi(0.7, &median), 0.5);
        let grid = QuantileGrid::equispaced(9).unwrap();
        let mut rng = substream(12, 0, Purpose::SimulatedPsi);
        let draws = 1_000_000;
        let vals: Vec<f64> = (0..draws).map(|_| simulated_psi(rng.random::<f64>(), &grid)).collect();
        let mean = vals.iter().sum::<f64>() / draws as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
        assert!(mean.abs() < 0.01);
        assert!((var / sigma_k_sq(&grid) - 1.0).abs() < 0.005);
    }

    #[test]
    fn simulated_psi_test_is_reproducible() {
        let (data, m, est) = fixture(Variant::VarianceMin, 13);
        let grid = QuantileGrid::equispaced(5).unwrap();
        let g = [4usize, 5, 6];
        let a = simulated_psi_test(&est, &m, &data, &grid, &g, &[0.0; 3], 0.05, 250, 7).unwrap();
        let b = simulated_psi_test(&est, &m, &data, &grid, &g, &[0.0; 3], 0.05, 250, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.mode, BootstrapMode::SimulatedPsi);
        assert!(a.c_alpha > 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn box_threshold_grows_with_dimension(alpha in 0.001f64..0.5, q in 1usize..50) {
            let a = box_threshold(alpha, q).unwrap();
            let b = box_threshold(alpha, q + 1).unwrap();
            prop_assert!(b > a);
            prop_assert!(a >= normal_quantile(1.0 - alpha / 2.0) - 1e-12);
        }

        #[test]
        fn power_stays_between_alpha_and_one(a in 0.0f64..5.0, g in 0.0f64..1.0, n in 10usize..5000) {
            let v = power_gn(0.05, g, a, n, 2.0, 1.5, 1.2).unwrap();
            prop_assert!((0.05 - 1e-12..=1.0).contains(&v));
        }
    }
}
