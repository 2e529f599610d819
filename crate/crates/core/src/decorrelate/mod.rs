//! Decorrelation matrices and the de-biasing step.
//!
//! Row `j` of the matrix `M` approximately inverts the sample covariance
//! `Σ̂ = XᵀX/n` in direction `e_j` under the constraints
//! `‖Σ̂μ − e_j‖∞ ≤ γ₁`, `‖Xμ‖∞ ≤ γ₂` and `|n^{-1/2}·1ᵀXμ| ≤ γ₃`. The
//! variance-minimizing rows feed confidence intervals; the ℓ₁-minimizing
//! rows feed the simultaneous tests.

mod column;

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, QuantileGrid};
use crate::error::{Error, Result};
use crate::first_stage::{FirstStageFit, Method};
use crate::nuisance::NuisanceEstimates;
use crate::optim::SolverSettings;

pub use column::CERTIFY_SLACK;
use column::{ColumnProblem, KernelCache};

/// Constraint radii and the escalation policy applied when a column is
/// infeasible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub escalation_factor: f64,
    pub max_escalations: usize,
}

impl GammaParams {
    pub fn validate(&self) -> Result<()> {
        for (name, g) in [("gamma1", self.gamma1), ("gamma2", self.gamma2), ("gamma3", self.gamma3)] {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::domain(format!("{name} must be positive and finite, got {g}")));
            }
        }
        if !(self.escalation_factor > 1.0 && self.escalation_factor.is_finite()) {
            return Err(Error::domain("escalation factor must exceed 1"));
        }
        Ok(())
    }

    /// All three radii multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        GammaParams { gamma1: self.gamma1 * factor, gamma2: self.gamma2 * factor, gamma3: self.gamma3 * factor, ..*self }
    }
}

/// `γ₁ = 0.5·√(log p / n)`, `γ₂ = γ₃ = 5·√(log p)`, escalation ×1.5 up to 8 times.
pub fn default_gammas(n: usize, p: usize) -> Result<GammaParams> {
    if n < 2 || p < 2 {
        return Err(Error::domain("default radii need n ≥ 2 and p ≥ 2"));
    }
    let lp = (p as f64).ln();
    Ok(GammaParams {
        gamma1: 0.5 * (lp / n as f64).sqrt(),
        gamma2: 5.0 * lp.sqrt(),
        gamma3: 5.0 * lp.sqrt(),
        escalation_factor: 1.5,
        max_escalations: 8,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Minimize `μᵀΣ̂μ`.
    VarianceMin,
    /// Minimize `‖μ‖₁`.
    L1Min,
}

/// Outcome of one column program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnRecord {
    pub index: usize,
    pub feasible: bool,
    pub escalations_used: usize,
    /// Constraint values `(‖Σ̂μ − e_j‖∞, ‖Xμ‖∞, |n^{-1/2}·1ᵀXμ|)`.
    pub achieved: [f64; 3],
    pub objective: f64,
    /// Radii the stored row was certified against.
    pub gammas: GammaParams,
}

/// Rows `μ̂_j` for the coordinates in `indices`, in that order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecorrelationMatrix {
    pub p: usize,
    pub indices: Vec<usize>,
    pub rows: DMatrix<f64>,
    pub variant: Variant,
    pub columns: Vec<ColumnRecord>,
}

impl DecorrelationMatrix {
    pub fn is_full(&self) -> bool {
        self.indices.len() == self.p && self.indices.iter().enumerate().all(|(a, &b)| a == b)
    }

    /// Position of coordinate `j` among the stored rows.
    pub fn position(&self, j: usize) -> Option<usize> {
        self.indices.iter().position(|&k| k == j)
    }

    pub fn row(&self, j: usize) -> Option<DVector<f64>> {
        self.position(j).map(|r| self.rows.row(r).transpose())
    }

    /// `μ̂_jᵀΣ̂μ̂_j` for every stored row, as `‖Xμ̂_j‖²/n`.
    pub fn variance_terms(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.p {
            return Err(Error::dim("design width differs from the matrix"));
        }
        let xm = x * self.rows.transpose();
        let n = x.nrows() as f64;
        Ok((0..self.indices.len()).map(|r| xm.column(r).norm_squared() / n).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: DecorrelationMatrix = serde_json::from_str(s)?;
        if m.rows.nrows() != m.indices.len() || m.rows.ncols() != m.p || m.columns.len() != m.indices.len() {
            return Err(Error::Format("decorrelation matrix parts have inconsistent sizes".into()));
        }
        Ok(m)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Writes the full `p × p` matrix in the binary matrix format.
    pub fn save_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        if !self.is_full() {
            return Err(Error::domain("only a full matrix can be written in the binary format"));
        }
        crate::data::io::save_matrix(&self.rows, path)
    }
}

fn check_sigma(x: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<()> {
    let (n, p) = x.shape();
    if sigma.shape() != (p, p) {
        return Err(Error::dim("covariance must be p × p"));
    }
    let reference = x.tr_mul(x) / n as f64;
    let scale = 1.0 + reference.amax();
    if (&reference - sigma).amax() > 1e-10 * scale {
        return Err(Error::domain("covariance must equal XᵀX/n"));
    }
    Ok(())
}

/// Variance-minimizing row for coordinate `j`, escalating the radii while the
/// program is infeasible.
pub fn solve_mu_column(sigma: &DMatrix<f64>, x: &DMatrix<f64>, j: usize, gammas: &GammaParams, settings: &SolverSettings) -> Result<(DVector<f64>, ColumnRecord)> {
    solve_column_variant(sigma, x, j, gammas, Variant::VarianceMin, settings)
}

/// [`solve_mu_column`] for either variant.
pub fn solve_column_variant(sigma: &DMatrix<f64>, x: &DMatrix<f64>, j: usize, gammas: &GammaParams, variant: Variant, settings: &SolverSettings) -> Result<(DVector<f64>, ColumnRecord)> {
    gammas.validate()?;
    settings.validate()?;
    check_sigma(x, sigma)?;
    if j >= x.ncols() {
        return Err(Error::domain(format!("coordinate {j} outside 0..{}", x.ncols())));
    }
    let problem = ColumnProblem::new(x, sigma.clone());
    problem.solve_column(&KernelCache::new(), variant, j, gammas, settings)
}

/// Full decorrelation matrix.
pub fn build_m(data: &Dataset, gammas: &GammaParams, variant: Variant, settings: &SolverSettings) -> Result<DecorrelationMatrix> {
    let all: Vec<usize> = (0..data.p()).collect();
    build_m_rows(data, &all, gammas, variant, settings)
}

/// Rows for the listed coordinates only; columns are solved in parallel.
pub fn build_m_rows(data: &Dataset, indices: &[usize], gammas: &GammaParams, variant: Variant, settings: &SolverSettings) -> Result<DecorrelationMatrix> {
    gammas.validate()?;
    settings.validate()?;
    let p = data.p();
    if let Some(&bad) = indices.iter().find(|&&j| j >= p) {
        return Err(Error::domain(format!("coordinate {bad} outside 0..{p}")));
    }
    let problem = ColumnProblem::new(data.x(), data.gram());
    // the ADMM factorization is only needed when a column leaves the fast path
    let cache = KernelCache::new();
    let results: Vec<Result<(DVector<f64>, ColumnRecord)>> =
        indices.par_iter().map(|&j| problem.solve_column(&cache, variant, j, gammas, settings)).collect();
    let mut rows = DMatrix::zeros(indices.len(), p);
    let mut columns = Vec::with_capacity(indices.len());
    for (r, res) in results.into_iter().enumerate() {
        let (mu, rec) = res?;
        rows.row_mut(r).copy_from(&mu.transpose());
        columns.push(rec);
    }
    Ok(DecorrelationMatrix { p, indices: indices.to_vec(), rows, variant, columns })
}

/// `κ̂ = Σ_k n⁻¹ Σ_i (1{y_i ≤ x_iᵀβ + b_k} − τ_k)·x_i`, with an exact `≤`.
pub fn compute_kappa(data: &Dataset, beta: &DVector<f64>, b: &[f64], grid: &QuantileGrid) -> Result<DVector<f64>> {
    if beta.len() != data.p() {
        return Err(Error::dim("beta length differs from p"));
    }
    if b.len() != grid.len() {
        return Err(Error::dim("one intercept per level is required"));
    }
    let fitted = data.x() * beta;
    let y = data.y();
    let n = data.n();
    let weights = DVector::from_fn(n, |i, _| {
        grid.taus().iter().zip(b).map(|(&t, &bk)| if y[i] <= fitted[i] + bk { 1.0 - t } else { -t }).sum::<f64>()
    });
    Ok(data.x().tr_mul(&weights) / n as f64)
}

/// Which correction produced a [`DebiasedEstimate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Correction {
    /// `β̂ − θ̂⁻¹·M·κ̂`, with variance scale `σ_K/θ̂`.
    CompositeQuantile,
    /// `β̂ + M·Xᵀ(y − Xβ̂)/n`, with variance scale `σ̂`.
    Square,
}

/// De-biased coordinates `coords` with their asymptotic variances.
///
/// `var_diag[r] = scale²·μ̂ᵀΣ̂μ̂` for the row of `coords[r]`, so the standard
/// error of `beta_d[r]` is `√(var_diag[r]/n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasedEstimate {
    pub coords: Vec<usize>,
    pub beta_d: DVector<f64>,
    /// First-stage values at `coords`.
    pub beta_hat: DVector<f64>,
    /// Full-length score vector (κ̂, or `−Xᵀ(y − Xβ̂)/n` for the square correction).
    pub kappa: DVector<f64>,
    pub theta_hat: f64,
    pub scale: f64,
    pub var_diag: DVector<f64>,
    pub n: usize,
    pub method: Method,
    pub variant: Variant,
    pub correction: Correction,
}

impl DebiasedEstimate {
    pub fn position(&self, j: usize) -> Option<usize> {
        self.coords.iter().position(|&k| k == j)
    }

    pub fn std_error(&self, j: usize) -> Option<f64> {
        self.position(j).map(|r| (self.var_diag[r] / self.n as f64).sqrt())
    }
}

fn check_m(m: &DecorrelationMatrix, data: &Dataset, beta: &DVector<f64>) -> Result<()> {
    if m.p != data.p() || beta.len() != data.p() {
        return Err(Error::dim("matrix, fit and data disagree on p"));
    }
    Ok(())
}

/// Composite-quantile correction `β̂^d = β̂ − θ̂⁻¹·M·κ̂`.
///
/// The intercepts are the nuisance quantiles `b̂_k` of the first-stage
/// residuals, so any first stage (single or composite) can be corrected.
pub fn debias_cq(fit: &FirstStageFit, nuisance: &NuisanceEstimates, m: &DecorrelationMatrix, data: &Dataset, grid: &QuantileGrid) -> Result<DebiasedEstimate> {
    check_m(m, data, &fit.beta_hat)?;
    if !(nuisance.theta_hat > 0.0 && nuisance.theta_hat.is_finite()) {
        return Err(Error::domain("theta_hat must be positive"));
    }
    if nuisance.b_hat.len() != grid.len() {
        return Err(Error::dim("nuisance estimates were computed on a different grid"));
    }
    let kappa = compute_kappa(data, &fit.beta_hat, &nuisance.b_hat, grid)?;
    let correction = &m.rows * &kappa / nuisance.theta_hat;
    let beta_hat = DVector::from_iterator(m.indices.len(), m.indices.iter().map(|&j| fit.beta_hat[j]));
    let beta_d = &beta_hat - correction;
    let scale = nuisance.sigma_k / nuisance.theta_hat;
    let var_diag = DVector::from_vec(m.variance_terms(data.x())?).map(|v| scale * scale * v);
    Ok(DebiasedEstimate {
        coords: m.indices.clone(),
        beta_d,
        beta_hat,
        kappa,
        theta_hat: nuisance.theta_hat,
        scale,
        var_diag,
        n: data.n(),
        method: fit.method,
        variant: m.variant,
        correction: Correction::CompositeQuantile,
    })
}

/// Square-loss correction `β̂^d = β̂ + M·Xᵀ(y − Xβ̂)/n` with noise level `sigma_hat`.
pub fn debias_square(fit: &FirstStageFit, sigma_hat: f64, m: &DecorrelationMatrix, data: &Dataset) -> Result<DebiasedEstimate> {
    check_m(m, data, &fit.beta_hat)?;
    if !(sigma_hat > 0.0 && sigma_hat.is_finite()) {
        return Err(Error::domain("sigma_hat must be positive"));
    }
    let r = data.residuals(&fit.beta_hat);
    let kappa = -(data.x().tr_mul(&r) / data.n() as f64);
    let beta_hat = DVector::from_iterator(m.indices.len(), m.indices.iter().map(|&j| fit.beta_hat[j]));
    let beta_d = &beta_hat - &m.rows * &kappa;
    let var_diag = DVector::from_vec(m.variance_terms(data.x())?).map(|v| sigma_hat * sigma_hat * v);
    Ok(DebiasedEstimate {
        coords: m.indices.clone(),
        beta_d,
        beta_hat,
        kappa,
        theta_hat: 1.0,
        scale: sigma_hat,
        var_diag,
        n: data.n(),
        method: fit.method,
        variant: m.variant,
        correction: Correction::Square,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::SolveReport;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian_x(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = crate::rng::substream(seed, 0, crate::rng::Purpose::Oracle);
        DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    fn dataset(n: usize, p: usize, seed: u64) -> Dataset {
        let x = gaussian_x(n, p, seed);
        let mut rng = crate::rng::substream(seed, 1, crate::rng::Purpose::Oracle);
        let y = DVector::from_fn(n, |i, _| x[(i, 0)] + rng.sample::<f64, _>(StandardNormal));
        Dataset::new(x, y).unwrap()
    }

    /// Columns of a Sylvester–Hadamard matrix, so `XᵀX/n = I`.
    fn orthonormal(n: usize, p: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, p, |i, j| if (i & j).count_ones() % 2 == 0 { 1.0 } else { -1.0 })
    }

    fn wide(g1: f64) -> GammaParams {
        GammaParams { gamma1: g1, gamma2: 100.0, gamma3: 100.0, escalation_factor: 1.5, max_escalations: 8 }
    }

    fn fit(beta: DVector<f64>, b: Vec<f64>, method: Method) -> FirstStageFit {
        let report = SolveReport { iterations: 0, primal_residual: 0.0, dual_residual: 0.0, converged: true, objective: 0.0 };
        FirstStageFit { beta_hat: beta, b_hat: b, lambda: 0.0, method, report }
    }

    fn full_matrix(rows: DMatrix<f64>) -> DecorrelationMatrix {
        let p = rows.ncols();
        DecorrelationMatrix { p, indices: (0..p).collect(), rows, variant: Variant::VarianceMin, columns: Vec::new() }
    }

    #[test]
    fn default_radii() {
        let g = default_gammas(200, 250).unwrap();
        assert!((g.gamma1 - 0.0831).abs() < 5e-4);
        assert!((g.gamma2 - 11.75).abs() < 5e-3);
        assert_eq!(g.gamma2, g.gamma3);
        assert_eq!((g.escalation_factor, g.max_escalations), (1.5, 8));
        assert!(default_gammas(400, 250).unwrap().gamma1 < g.gamma1);
        assert!(default_gammas(1, 250).is_err());
    }

    #[test]
    fn orthonormal_design_gives_shrunken_unit_vectors() {
        let x = orthonormal(16, 6);
        let sigma = x.tr_mul(&x) / 16.0;
        assert!((&sigma - DMatrix::identity(6, 6)).amax() < 1e-15);
        for j in 0..6 {
            let (mu, rec) = solve_mu_column(&sigma, &x, j, &wide(0.01), &SolverSettings::default()).unwrap();
            // the minimizer shrinks e_j by γ₁
            assert!((mu[j] - 0.99).abs() < 1e-8);
            assert!(rec.objective <= 1.01f64.powi(2));
            assert!((rec.objective - 0.9801).abs() < 1e-8);
            assert_eq!(rec.escalations_used, 0);
        }
    }

    #[test]
    fn orthonormal_design_both_variants_near_identity() {
        let x = orthonormal(16, 6);
        let y = DVector::from_element(16, 0.0);
        let d = Dataset::new(x, y).unwrap();
        for variant in [Variant::VarianceMin, Variant::L1Min] {
            let m = build_m(&d, &wide(0.01), variant, &SolverSettings::default()).unwrap();
            assert!(m.is_full());
            assert!((&m.rows - DMatrix::identity(6, 6)).amax() <= 2.0 * 0.01 + 1e-9);
        }
    }

    #[test]
    fn variance_row_beats_inverse_covariance_oracle() {
        let x = gaussian_x(80, 5, 3);
        let sigma = x.tr_mul(&x) / 80.0;
        let inv = sigma.clone().try_inverse().unwrap();
        let g = default_gammas(80, 5).unwrap();
        for j in 0..5 {
            let oracle = inv.column(j).into_owned();
            let xo = &x * &oracle;
            assert!(xo.amax() <= g.gamma2 && (xo.sum() / 80f64.sqrt()).abs() <= g.gamma3, "oracle must be feasible");
            let (mu, rec) = solve_mu_column(&sigma, &x, j, &g, &SolverSettings::default()).unwrap();
            assert_eq!(rec.escalations_used, 0);
            assert!(rec.objective <= inv[(j, j)] + 1e-6);
            assert!(rec.achieved[0] <= g.gamma1 + CERTIFY_SLACK);
            assert!(rec.achieved[1] <= g.gamma2 + CERTIFY_SLACK);
            assert!(rec.achieved[2] <= g.gamma3 + CERTIFY_SLACK);
            assert!((mu.transpose() * &sigma * &mu)[(0, 0)] - rec.objective < 1e-10);
        }
    }

    #[test]
    fn machine_zero_radii_escalate() {
        let x = gaussian_x(40, 8, 4);
        let sigma = x.tr_mul(&x) / 40.0;
        let tiny = GammaParams { gamma1: 1e-12, gamma2: 1e-12, gamma3: 1e-12, escalation_factor: 1e6, max_escalations: 8 };
        let (mu, rec) = solve_mu_column(&sigma, &x, 2, &tiny, &SolverSettings::default()).unwrap();
        assert!(rec.escalations_used >= 1);
        let g = rec.gammas;
        assert!(rec.achieved[0] <= g.gamma1 + CERTIFY_SLACK && rec.achieved[1] <= g.gamma2 + CERTIFY_SLACK);
        assert!(mu.iter().all(|v| v.is_finite()));

        // with the default policy the radii never leave machine zero
        let stuck = GammaParams { escalation_factor: 1.5, ..tiny };
        match solve_mu_column(&sigma, &x, 2, &stuck, &SolverSettings::default()) {
            Err(Error::Infeasible { column, escalations }) => assert_eq!((column, escalations), (2, 8)),
            other => panic!("expected an infeasible column, got {other:?}"),
        }
    }

    #[test]
    fn variants_bound_each_other() {
        let d = dataset(80, 5, 5);
        let g = default_gammas(80, 5).unwrap();
        let s = SolverSettings::default();
        let var = build_m(&d, &g, Variant::VarianceMin, &s).unwrap();
        let l1 = build_m(&d, &g, Variant::L1Min, &s).unwrap();
        let vt = var.variance_terms(d.x()).unwrap();
        let lt = l1.variance_terms(d.x()).unwrap();
        for j in 0..5 {
            let norm1 = |m: &DecorrelationMatrix| m.rows.row(j).iter().map(|v| v.abs()).sum::<f64>();
            assert!(norm1(&l1) <= norm1(&var) + 1e-6, "column {j}");
            assert!(vt[j] <= lt[j] + 1e-6, "column {j}");
            assert_eq!(var.columns[j].escalations_used, 0);
            assert_eq!(l1.columns[j].escalations_used, 0);
        }
    }

    #[test]
    fn simplex_hits_the_orthonormal_closed_form() {
        let x = orthonormal(16, 4);
        let problem = ColumnProblem::new(&x, x.tr_mul(&x) / 16.0);
        let mu = problem.l1_simplex(2, &wide(0.3)).unwrap();
        let expected = DVector::from_fn(4, |k, _| if k == 2 { 0.7 } else { 0.0 });
        assert!((mu - expected).amax() < 1e-9);
    }

    #[test]
    fn simplex_respects_a_binding_sup_norm_row() {
        let d = dataset(60, 10, 8);
        let problem = ColumnProblem::new(d.x(), d.gram());
        let loose = problem.l1_simplex(3, &wide(0.2)).unwrap();
        let reach = problem.achieved(3, &loose)[1];
        let tight = GammaParams { gamma2: 0.8 * reach, ..wide(0.2) };
        let mu = problem.l1_simplex(3, &tight).unwrap();
        assert!(problem.certified(3, &mu, &tight));
        assert!(mu.iter().map(|v| v.abs()).sum::<f64>() >= loose.iter().map(|v| v.abs()).sum::<f64>() - 1e-9);
    }

    #[test]
    fn stored_rows_satisfy_recorded_radii() {
        let d = dataset(60, 90, 6);
        let g = default_gammas(60, 90).unwrap();
        let s = SolverSettings::default();
        let m = build_m_rows(&d, &[0, 7, 45, 89], &g, Variant::VarianceMin, &s).unwrap();
        let problem = ColumnProblem::new(d.x(), d.gram());
        for (r, &j) in m.indices.iter().enumerate() {
            let rec = &m.columns[r];
            let mu = m.row(j).unwrap();
            assert!(problem.certified(j, &mu, &rec.gammas), "column {j}");
            assert_eq!(rec.index, j);
            assert!(rec.feasible);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = gaussian_x(20, 3, 7);
        let sigma = x.tr_mul(&x) / 20.0;
        let s = SolverSettings::default();
        let g = default_gammas(20, 3).unwrap();
        assert!(solve_mu_column(&(&sigma * 1.01), &x, 0, &g, &s).is_err());
        assert!(solve_mu_column(&sigma, &x, 3, &g, &s).is_err());
        assert!(solve_mu_column(&sigma, &x, 0, &GammaParams { gamma1: 0.0, ..g }, &s).is_err());
        assert!(solve_mu_column(&sigma, &x, 0, &GammaParams { escalation_factor: 1.0, ..g }, &s).is_err());
    }

    #[test]
    fn kappa_when_every_residual_is_on_one_side() {
        let d = dataset(30, 4, 8);
        let grid = QuantileGrid::equispaced(3).unwrap();
        let beta = DVector::zeros(4);
        let mean_x = d.x().row_mean().transpose();
        let above = compute_kappa(&d, &beta, &[-1e6; 3], &grid).unwrap();
        let below = compute_kappa(&d, &beta, &[1e6; 3], &grid).unwrap();
        let tau_sum: f64 = grid.taus().iter().sum();
        assert!((above + &mean_x * tau_sum).amax() < 1e-12);
        assert!((below - &mean_x * (3.0 - tau_sum)).amax() < 1e-12);
    }

    #[test]
    fn kappa_hand_instance() {
        // residuals y − xβ = (0.5, −1, 0.5) against b = (−0.5, 0.5) with β = 1
        let x = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let y = DVector::from_vec(vec![1.5, 1.0, 3.5]);
        let d = Dataset::new(x, y).unwrap();
        let grid = QuantileGrid::new(vec![0.25, 0.75]).unwrap();
        let k = compute_kappa(&d, &DVector::from_element(1, 1.0), &[-0.5, 0.5], &grid).unwrap();
        // row 1: (0−.25)+(1−.75)=0; row 2: .75+.25=1; row 3: the tie at b₂ counts as below, −.25+.25=0
        assert!((k[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_median_level_matches_sign_form() {
        let d = dataset(50, 6, 9);
        let mut rng = crate::rng::substream(9, 2, crate::rng::Purpose::Oracle);
        let beta = DVector::from_fn(6, |_, _| rng.sample::<f64, _>(StandardNormal) * 0.3);
        let b = 0.137;
        let f = 0.41;
        let grid = QuantileGrid::median();
        let rows = DMatrix::from_fn(6, 6, |_, _| rng.sample::<f64, _>(StandardNormal));
        let m = full_matrix(rows.clone());
        let nu = NuisanceEstimates {
            b_hat: vec![b],
            f_hat: vec![f],
            theta_hat: f,
            sigma_k: 0.5,
            mode: crate::nuisance::DensityMode::Estimated { h: 0.1 },
            s_used: 1,
        };
        let est = debias_cq(&fit(beta.clone(), vec![b], Method::Plad), &nu, &m, &d, &grid).unwrap();
        let r = d.residuals(&beta);
        let mut sum = DVector::zeros(6);
        for i in 0..50 {
            let sign = (r[i] - b).signum();
            sum += &rows * d.x().row(i).transpose() * sign;
        }
        let expected = &beta + sum / (2.0 * 50.0 * f);
        assert!((est.beta_d - expected).amax() < 1e-12);
        assert!((est.scale - 0.5 / f).abs() < 1e-15);
    }

    #[test]
    fn square_correction_with_exact_fit_is_identity() {
        let d = dataset(30, 4, 10);
        let beta = DVector::from_vec(vec![0.3, -1.0, 0.0, 2.0]);
        let y = d.x() * &beta;
        let exact = Dataset::new(d.x().clone(), y).unwrap();
        let m = full_matrix(gaussian_x(4, 4, 11));
        let est = debias_square(&fit(beta.clone(), Vec::new(), Method::Lasso), 1.0, &m, &exact).unwrap();
        assert!((est.beta_d - beta).amax() < 1e-12);
    }

    #[test]
    fn square_correction_with_inverse_covariance_is_least_squares() {
        let d = dataset(50, 4, 12);
        let inv = d.gram().try_inverse().unwrap();
        let ls = (d.x().tr_mul(d.x())).cholesky().unwrap().solve(&d.x().tr_mul(d.y()));
        for start in [DVector::zeros(4), DVector::from_vec(vec![3.0, -2.0, 1.0, 0.5])] {
            let est = debias_square(&fit(start, Vec::new(), Method::Lasso), 1.0, &full_matrix(inv.clone()), &d).unwrap();
            assert!((&est.beta_d - &ls).amax() < 1e-8);
        }
    }

    #[test]
    fn variance_uses_scale_and_row_quadratic_form() {
        let d = dataset(40, 3, 13);
        let m = full_matrix(DMatrix::identity(3, 3));
        let est = debias_square(&fit(DVector::zeros(3), Vec::new(), Method::Lasso), 2.0, &m, &d).unwrap();
        let sigma = d.gram();
        for j in 0..3 {
            assert!((est.var_diag[j] - 4.0 * sigma[(j, j)]).abs() < 1e-12);
            assert!((est.std_error(j).unwrap() - (est.var_diag[j] / 40.0).sqrt()).abs() < 1e-15);
        }
        assert!(debias_square(&fit(DVector::zeros(3), Vec::new(), Method::Lasso), 0.0, &m, &d).is_err());
        assert!(debias_square(&fit(DVector::zeros(2), Vec::new(), Method::Lasso), 1.0, &m, &d).is_err());
    }

    #[test]
    fn json_round_trip() {
        let d = dataset(30, 4, 14);
        let m = build_m(&d, &default_gammas(30, 4).unwrap(), Variant::L1Min, &SolverSettings::default()).unwrap();
        let back = DecorrelationMatrix::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        m.save_json(&path).unwrap();
        assert_eq!(DecorrelationMatrix::load_json(&path).unwrap(), m);
        m.save_binary(dir.path().join("m.bin")).unwrap();
        assert_eq!(crate::data::io::load_matrix(dir.path().join("m.bin")).unwrap(), m.rows);

        let mut broken = m.clone();
        broken.indices.pop();
        assert!(DecorrelationMatrix::from_json(&broken.to_json().unwrap()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn kappa_is_bounded(seed in 0u64..10_000, k in 1usize..6, shift in -2.0f64..2.0) {
            let d = dataset(15, 3, seed);
            let grid = QuantileGrid::equispaced(k).unwrap();
            let b: Vec<f64> = (0..k).map(|i| shift + 0.3 * i as f64).collect();
            let kappa = compute_kappa(&d, &DVector::from_element(3, 0.5), &b, &grid).unwrap();
            prop_assert!(kappa.amax() <= k as f64 * d.x().amax() + 1e-12);
        }
    }
}
