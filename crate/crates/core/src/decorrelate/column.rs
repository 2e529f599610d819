//! Per-column programs for the decorrelation matrix.
//!
//! Both variants share the constraint set
//! `‖Σ̂μ − e_j‖∞ ≤ γ₁`, `‖Xμ‖∞ ≤ γ₂`, `|n^{-1/2}·1ᵀXμ| ≤ γ₃`,
//! written as `A·μ + c` in a stacked box with `A = [Σ̂; X; n^{-1/2}·1ᵀX]`.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use super::{ColumnRecord, GammaParams, Variant};
use crate::error::{Error, Result};
use crate::optim::{soft_threshold_scalar, AdmmIterate, AdmmKernel, L1Norm, LinfBall, SolverSettings, ZeroFn};

/// Absolute slack allowed when certifying the constraints.
pub const CERTIFY_SLACK: f64 = 1e-6;
const DIVERGENCE_CAP: f64 = 1e6;
const MAX_SWEEPS: usize = 5000;
const POLISH_EVERY: usize = 50;

/// Lazily factored ADMM system, shared by the columns of one matrix.
pub(crate) type KernelCache<'a> = OnceLock<Option<AdmmKernel<'a>>>;

/// Design quantities shared by every column of one dataset.
pub(crate) struct ColumnProblem<'a> {
    pub x: &'a DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub stacked: DMatrix<f64>,
    twice_sigma: DMatrix<f64>,
}

impl<'a> ColumnProblem<'a> {
    pub fn new(x: &'a DMatrix<f64>, sigma: DMatrix<f64>) -> Self {
        let (n, p) = x.shape();
        let mut stacked = DMatrix::zeros(p + n + 1, p);
        stacked.view_mut((0, 0), (p, p)).copy_from(&sigma);
        stacked.view_mut((p, 0), (n, p)).copy_from(x);
        let root_n = (n as f64).sqrt();
        for j in 0..p {
            stacked[(p + n, j)] = x.column(j).sum() / root_n;
        }
        let twice_sigma = &sigma * 2.0;
        ColumnProblem { x, sigma, stacked, twice_sigma }
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn kernel(&self, variant: Variant, rho: f64) -> Result<AdmmKernel<'_>> {
        match variant {
            Variant::VarianceMin => AdmmKernel::new(&self.stacked, Some(&self.twice_sigma), true, rho),
            Variant::L1Min => AdmmKernel::new(&self.stacked, None, true, rho),
        }
    }

    /// `(‖Σ̂μ − e_j‖∞, ‖Xμ‖∞, |n^{-1/2}·1ᵀXμ|)`.
    pub fn achieved(&self, j: usize, mu: &DVector<f64>) -> [f64; 3] {
        let sm = &self.sigma * mu;
        let c1 = (0..self.p()).map(|k| (sm[k] - if k == j { 1.0 } else { 0.0 }).abs()).fold(0.0, f64::max);
        let xm = self.x * mu;
        let c2 = xm.amax();
        let c3 = (xm.sum() / (self.n() as f64).sqrt()).abs();
        [c1, c2, c3]
    }

    pub fn certified(&self, j: usize, mu: &DVector<f64>, g: &GammaParams) -> bool {
        let a = self.achieved(j, mu);
        a[0] <= g.gamma1 + CERTIFY_SLACK && a[1] <= g.gamma2 + CERTIFY_SLACK && a[2] <= g.gamma3 + CERTIFY_SLACK
    }

    /// `μᵀΣ̂μ`, computed as `‖Xμ‖²/n`.
    pub fn variance_term(&self, mu: &DVector<f64>) -> f64 {
        (self.x * mu).norm_squared() / self.n() as f64
    }

    fn radii(&self, g: &GammaParams) -> Vec<f64> {
        let (n, p) = (self.n(), self.p());
        let mut r = vec![g.gamma1; p];
        r.extend(std::iter::repeat_n(g.gamma2, n));
        r.push(g.gamma3);
        r
    }

    fn offset(&self, j: usize) -> Vec<f64> {
        let mut c = vec![0.0; self.stacked.nrows()];
        c[j] = -1.0;
        c
    }

    /// Coordinate descent on `½vᵀΣ̂v − v_j + γ₁‖v‖₁`, whose minimizer also
    /// minimizes `μᵀΣ̂μ` under the first constraint alone. `None` when the
    /// iterates diverge (the constraint is then infeasible) or stall.
    pub fn dual_descent(&self, j: usize, gamma1: f64, settings: &SolverSettings) -> Option<DVector<f64>> {
        let p = self.p();
        let s = &self.sigma;
        let mut v = DVector::zeros(p);
        let mut sv = DVector::zeros(p);
        let tol = 1e-12_f64.max(settings.tol_primal * 1e-4);
        let limit = settings.max_iter.min(MAX_SWEEPS);

        let update = |k: usize, v: &mut DVector<f64>, sv: &mut DVector<f64>| -> f64 {
            let skk = s[(k, k)];
            if skk <= 0.0 {
                return 0.0;
            }
            let target = if k == j { 1.0 } else { 0.0 };
            let z = target - sv[k] + skk * v[k];
            let new = soft_threshold_scalar(gamma1, z) / skk;
            let delta = new - v[k];
            if delta != 0.0 {
                sv.axpy(delta, &s.column(k), 1.0);
                v[k] = new;
            }
            delta.abs() * skk
        };

        let mut sweeps = 0;
        while sweeps < limit {
            sweeps += 1;
            let mut biggest = 0.0f64;
            for k in 0..p {
                biggest = biggest.max(update(k, &mut v, &mut sv));
            }
            if v.amax() > DIVERGENCE_CAP || !biggest.is_finite() {
                return None;
            }
            if biggest <= tol {
                return Some(v);
            }
            let active: Vec<usize> = (0..p).filter(|&k| v[k] != 0.0).collect();
            while sweeps < limit {
                sweeps += 1;
                let mut inner = 0.0f64;
                for &k in &active {
                    inner = inner.max(update(k, &mut v, &mut sv));
                }
                if v.amax() > DIVERGENCE_CAP {
                    return None;
                }
                if inner <= tol {
                    break;
                }
            }
        }
        None
    }

    fn admm(&self, kernel: &AdmmKernel, variant: Variant, j: usize, g: &GammaParams, settings: &SolverSettings, warm: Option<&DVector<f64>>) -> Result<Vec<DVector<f64>>> {
        let p = self.p();
        let c = self.offset(j);
        let radii = self.radii(g);
        let f = LinfBall::new(vec![0.0; radii.len()], radii.clone());
        let l1 = L1Norm::uniform(1.0, p);
        let zero = ZeroFn;
        let gfun: &dyn crate::optim::Prox = match variant {
            Variant::VarianceMin => &zero,
            Variant::L1Min => &l1,
        };
        let tight = settings.clone().with_tol(settings.tol_primal.min(1e-8));
        let mut candidates: Vec<DVector<f64>> = Vec::new();
        let mut monitor = |view: &AdmmIterate| -> bool {
            if variant == Variant::L1Min && view.iteration % POLISH_EVERY == 0 {
                let mu = DVector::from_column_slice(view.x);
                let dual: Vec<f64> = view.scaled_dual.iter().map(|u| u * view.rho).collect();
                for cand in self.vertex_polish(j, &mu, &dual, &radii) {
                    if self.certified(j, &cand, g) {
                        candidates.push(cand);
                    }
                }
            }
            false
        };
        let warm_slice = warm.map(|w| w.as_slice());
        let (x, _report) = kernel.solve_monitored(&c, &f, Some(gfun), None, &tight, warm_slice, Some(&mut monitor))?;
        let x = DVector::from_vec(x);
        if variant == Variant::L1Min {
            let u_free: Vec<f64> = Vec::new();
            for cand in self.vertex_polish(j, &x, &u_free, &radii) {
                if self.certified(j, &cand, g) {
                    candidates.push(cand);
                }
            }
        }
        candidates.push(x);
        Ok(candidates)
    }

    /// Exact vertices of the ℓ₁ program near `mu`: keep the support, make the
    /// `|S|` constraint rows with least slack (or largest multiplier) active
    /// and solve the square system.
    fn vertex_polish(&self, j: usize, mu: &DVector<f64>, dual: &[f64], radii: &[f64]) -> Vec<DVector<f64>> {
        let p = self.p();
        let c = self.offset(j);
        let row = &self.stacked * mu;
        let scale = mu.amax().max(1e-300);
        let mut out = Vec::new();
        let mut orders: Vec<Vec<usize>> = Vec::new();
        let mut by_slack: Vec<usize> = (0..row.len()).collect();
        let slack = |i: usize| radii[i] - (row[i] + c[i]).abs();
        by_slack.sort_by(|&a, &b| slack(a).total_cmp(&slack(b)).then(a.cmp(&b)));
        orders.push(by_slack);
        if dual.len() == row.len() {
            let mut by_dual: Vec<usize> = (0..row.len()).collect();
            by_dual.sort_by(|&a, &b| dual[b].abs().total_cmp(&dual[a].abs()).then(a.cmp(&b)));
            orders.push(by_dual);
        }
        for thr in [1e-9, 1e-6, 1e-3] {
            let support: Vec<usize> = (0..p).filter(|&k| mu[k].abs() > thr * scale).collect();
            let m = support.len();
            if m == 0 || m > row.len() {
                continue;
            }
            for order in &orders {
                let active = &order[..m];
                let mut a = DMatrix::zeros(m, m);
                let mut rhs = DVector::zeros(m);
                for (r, &i) in active.iter().enumerate() {
                    for (col, &k) in support.iter().enumerate() {
                        a[(r, col)] = self.stacked[(i, k)];
                    }
                    let v = row[i] + c[i];
                    let side = if v != 0.0 { v.signum() } else if i < dual.len() && dual[i] != 0.0 { dual[i].signum() } else { 1.0 };
                    rhs[r] = side * radii[i] - c[i];
                }
                let Some(sol) = a.lu().solve(&rhs) else { continue };
                if sol.iter().any(|v| !v.is_finite()) {
                    continue;
                }
                let mut cand = DVector::zeros(p);
                for (col, &k) in support.iter().enumerate() {
                    cand[k] = sol[col];
                }
                out.push(cand);
            }
        }
        out
    }

    /// Exact solution of the ℓ₁ program by the simplex method, with
    /// `μ = u − v`, `u, v ≥ 0` and one bounded slack per constraint row.
    /// `None` when the program is infeasible or the solver gives up.
    pub fn l1_simplex(&self, j: usize, g: &GammaParams) -> Option<DVector<f64>> {
        use microlp::{ComparisonOp, OptimizationDirection, Problem};
        let p = self.p();
        let c = self.offset(j);
        let radii = self.radii(g);
        let mut lp = Problem::new(OptimizationDirection::Minimize);
        let pos: Vec<_> = (0..p).map(|_| lp.add_var(1.0, (0.0, f64::INFINITY))).collect();
        let neg: Vec<_> = (0..p).map(|_| lp.add_var(1.0, (0.0, f64::INFINITY))).collect();
        for (i, (&r, &ci)) in radii.iter().zip(&c).enumerate() {
            let slack = lp.add_var(0.0, (-r - ci, r - ci));
            let mut terms = Vec::with_capacity(2 * p + 1);
            for k in 0..p {
                let a = self.stacked[(i, k)];
                if a != 0.0 {
                    terms.push((pos[k], a));
                    terms.push((neg[k], -a));
                }
            }
            terms.push((slack, -1.0));
            lp.add_constraint(terms.as_slice(), ComparisonOp::Eq, 0.0);
        }
        let solution = lp.solve().ok()?.into_solution().ok()?;
        Some(DVector::from_fn(p, |k, _| solution.var_value(pos[k]) - solution.var_value(neg[k])))
    }

    /// One column at fixed radii. `None` when no certified point was found.
    pub fn solve_at<'s>(&'s self, cache: &KernelCache<'s>, variant: Variant, j: usize, g: &GammaParams, settings: &SolverSettings) -> Result<Option<DVector<f64>>> {
        // without a point meeting the first constraint the full program is
        // treated as infeasible at these radii
        let Some(seed) = self.dual_descent(j, g.gamma1, settings) else { return Ok(None) };
        let seed_ok = self.certified(j, &seed, g);
        if variant == Variant::VarianceMin && seed_ok {
            return Ok(Some(seed));
        }
        if variant == Variant::L1Min {
            if let Some(mu) = self.l1_simplex(j, g).filter(|mu| self.certified(j, mu, g)) {
                return Ok(Some(mu));
            }
        }
        let kernel = cache
            .get_or_init(|| self.kernel(variant, settings.rho).ok())
            .as_ref()
            .ok_or_else(|| Error::LinearAlgebra("decorrelation system could not be factored".into()))?;
        let mut pool = self.admm(kernel, variant, j, g, settings, Some(&seed))?;
        if seed_ok {
            pool.push(seed);
        }
        let score = |mu: &DVector<f64>| match variant {
            Variant::VarianceMin => self.variance_term(mu),
            Variant::L1Min => mu.iter().map(|v| v.abs()).sum(),
        };
        Ok(pool.into_iter().filter(|mu| self.certified(j, mu, g)).min_by(|a, b| score(a).total_cmp(&score(b))))
    }

    /// Solves column `j`, growing the radii by the escalation factor until a
    /// certified point is found.
    pub fn solve_column<'s>(&'s self, cache: &KernelCache<'s>, variant: Variant, j: usize, base: &GammaParams, settings: &SolverSettings) -> Result<(DVector<f64>, ColumnRecord)> {
        for attempt in 0..=base.max_escalations {
            let g = base.scaled(base.escalation_factor.powi(attempt as i32));
            if let Some(mu) = self.solve_at(cache, variant, j, &g, settings)? {
                let objective = match variant {
                    Variant::VarianceMin => self.variance_term(&mu),
                    Variant::L1Min => mu.iter().map(|v| v.abs()).sum(),
                };
                let record = ColumnRecord { index: j, feasible: true, escalations_used: attempt, achieved: self.achieved(j, &mu), objective, gammas: g };
                return Ok((mu, record));
            }
        }
        Err(Error::Infeasible { column: j, escalations: base.max_escalations })
    }
}
