use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{FirstStageFit, Method, NONZERO_THRESHOLD};
use crate::data::check::{check, quantiles_sorted};
use crate::data::{Dataset, QuantileGrid};
use crate::error::{Error, Result};
use crate::optim::{check_regression, SolveReport, SolverSettings};

/// `Σ_k n⁻¹ Σ_i φ_{τ_k}(y_i − x_iᵀβ − b_k) + λ‖β‖₁`.
pub fn cqr_objective(data: &Dataset, taus: &[f64], lambda: f64, beta: &DVector<f64>, b: &[f64]) -> f64 {
    let r = data.residuals(beta);
    objective_from_residuals(r.as_slice(), taus, lambda, beta, b)
}

fn objective_from_residuals(r: &[f64], taus: &[f64], lambda: f64, beta: &DVector<f64>, b: &[f64]) -> f64 {
    let n = r.len() as f64;
    let mut loss = 0.0;
    for (&tau, &bk) in taus.iter().zip(b) {
        loss += r.iter().map(|&ri| check(tau, ri - bk)).sum::<f64>() / n;
    }
    loss + lambda * beta.iter().map(|v| v.abs()).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktOutcome {
    pub max_dual_violation: f64,
    pub passes: bool,
}

/// Dual-feasibility certificate for a composite quantile fit.
///
/// Observations with a nonzero residual fix their subgradient at `τ_k` or
/// `τ_k − 1`; the remaining ones are chosen inside `[τ_k − 1, τ_k]` by box
/// constrained least squares to meet the support and intercept equations.
pub fn kkt_check_pcqr(data: &Dataset, grid: &QuantileGrid, lambda: f64, fit: &FirstStageFit) -> Result<KktOutcome> {
    if fit.beta_hat.len() != data.p() || fit.b_hat.len() != grid.len() {
        return Err(Error::dim("fit does not match the data and grid"));
    }
    Ok(kkt_core(data, grid.taus(), lambda, &fit.beta_hat, &fit.b_hat))
}

pub(crate) fn kkt_tolerance(lambda: f64) -> f64 {
    1e-4 * lambda + 1e-8
}

fn kkt_core(data: &Dataset, taus: &[f64], lambda: f64, beta: &DVector<f64>, b: &[f64]) -> KktOutcome {
    kkt_detail(data, taus, lambda, beta, b).0
}

/// Certificate plus the loss subgradient `n⁻¹Σ a_ik x_i` it was built from.
fn kkt_detail(data: &Dataset, taus: &[f64], lambda: f64, beta: &DVector<f64>, b: &[f64]) -> (KktOutcome, DVector<f64>) {
    let x = data.x();
    let (n, p) = x.shape();
    let nf = n as f64;
    let y_scale = data.y().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol_act = 1e-6 * (1.0 + y_scale);
    let r = data.residuals(beta);

    // per-observation sum of fixed subgradients, and per-level sums
    let mut row_weight = DVector::zeros(n);
    let mut level_sum = vec![0.0; taus.len()];
    let mut free: Vec<(usize, usize)> = Vec::new();
    for (k, (&tau, &bk)) in taus.iter().zip(b).enumerate() {
        for i in 0..n {
            let rik = r[i] - bk;
            if rik > tol_act {
                row_weight[i] += tau;
                level_sum[k] += tau;
            } else if rik < -tol_act {
                row_weight[i] += tau - 1.0;
                level_sum[k] += tau - 1.0;
            } else {
                free.push((i, k));
            }
        }
    }
    let support: Vec<usize> = (0..p).filter(|&j| beta[j].abs() > NONZERO_THRESHOLD).collect();

    // equations: support coordinates then intercepts, in gradient units
    let m = support.len() + taus.len();
    let mut bmat = DMatrix::zeros(m, free.len());
    let mut target = DVector::zeros(m);
    let g_fixed = x.tr_mul(&row_weight) / nf;
    for (e, &j) in support.iter().enumerate() {
        target[e] = lambda * beta[j].signum() - g_fixed[j];
        for (c, &(i, _)) in free.iter().enumerate() {
            bmat[(e, c)] = x[(i, j)] / nf;
        }
    }
    for (k, ls) in level_sum.iter().enumerate() {
        let e = support.len() + k;
        target[e] = -ls / nf;
        for (c, &(_, kk)) in free.iter().enumerate() {
            if kk == k {
                bmat[(e, c)] = 1.0 / nf;
            }
        }
    }
    let lo: Vec<f64> = free.iter().map(|&(_, k)| taus[k] - 1.0).collect();
    let hi: Vec<f64> = free.iter().map(|&(_, k)| taus[k]).collect();
    let a_free = box_least_squares(&bmat, &target, &lo, &hi);

    let mut w = row_weight;
    let mut level = level_sum;
    for (c, &(i, k)) in free.iter().enumerate() {
        w[i] += a_free[c];
        level[k] += a_free[c];
    }
    let grad = x.tr_mul(&w) / nf;
    let mut violation = 0.0f64;
    let mut on_support = vec![false; p];
    for &j in &support {
        on_support[j] = true;
        violation = violation.max((grad[j] - lambda * beta[j].signum()).abs());
    }
    for j in 0..p {
        if !on_support[j] {
            violation = violation.max(grad[j].abs() - lambda);
        }
    }
    for l in &level {
        violation = violation.max((l / nf).abs());
    }
    let violation = violation.max(0.0);
    (KktOutcome { max_dual_violation: violation, passes: violation <= kkt_tolerance(lambda) }, grad)
}

/// `argmin ‖B·a − t‖²` over the box `lo ≤ a ≤ hi`: an unconstrained
/// least-squares start, clipped, then projected coordinate descent.
fn box_least_squares(bmat: &DMatrix<f64>, target: &DVector<f64>, lo: &[f64], hi: &[f64]) -> Vec<f64> {
    let d = bmat.ncols();
    if d == 0 {
        return Vec::new();
    }
    let mut a: Vec<f64> = match bmat.clone().svd(true, true).solve(target, 1e-12) {
        Ok(sol) => (0..d).map(|c| sol[c].clamp(lo[c], hi[c])).collect(),
        Err(_) => (0..d).map(|c| 0.5 * (lo[c] + hi[c])).collect(),
    };
    let col_sq: Vec<f64> = (0..d).map(|c| bmat.column(c).norm_squared()).collect();
    let mut resid = target - bmat * DVector::from_column_slice(&a);
    for _ in 0..20_000 {
        let mut biggest = 0.0f64;
        for c in 0..d {
            if col_sq[c] == 0.0 {
                continue;
            }
            let step = bmat.column(c).dot(&resid) / col_sq[c];
            let new = (a[c] + step).clamp(lo[c], hi[c]);
            let delta = new - a[c];
            if delta != 0.0 {
                resid.axpy(-delta, &bmat.column(c), 1.0);
                a[c] = new;
                biggest = biggest.max(delta.abs());
            }
        }
        if biggest < 1e-15 {
            break;
        }
    }
    a
}

/// Exact vertex solutions near an approximate minimizer: keep the support,
/// interpolate the `|S| + K` smallest residuals (at least one per level) and
/// solve the resulting square system.
fn vertex_polish(data: &Dataset, taus: &[f64], beta: &[f64], b: &[f64], subgradient: Option<&[f64]>) -> Vec<(DVector<f64>, Vec<f64>)> {
    let x = data.x();
    let y = data.y();
    let (n, p) = x.shape();
    let kk = taus.len();
    let beta_v = DVector::from_column_slice(beta);
    let r = data.residuals(&beta_v);
    let scale = beta.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);

    let mut supports: Vec<Vec<usize>> = Vec::new();
    for thr in [1e-9, 1e-7, 1e-5, 1e-3] {
        let s: Vec<usize> = (0..p).filter(|&j| beta[j].abs() > thr * scale).collect();
        if !supports.contains(&s) {
            supports.push(s);
        }
    }

    // candidate orderings of the observation/level pairs: by residual size,
    // and by how far the estimated subgradient sits inside [τ − 1, τ]
    let mut orderings: Vec<Vec<(f64, usize, usize)>> = Vec::new();
    let mut by_residual: Vec<(f64, usize, usize)> = Vec::with_capacity(n * kk);
    for k in 0..kk {
        for i in 0..n {
            by_residual.push(((r[i] - b[k]).abs(), i, k));
        }
    }
    by_residual.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)).then(a.1.cmp(&b.1)));
    orderings.push(by_residual);
    if let Some(sg) = subgradient {
        let mut by_dual: Vec<(f64, usize, usize)> = Vec::with_capacity(n * kk);
        for k in 0..kk {
            let t = taus[k];
            for i in 0..n {
                let a = sg[k * n + i];
                let inside = (a - (t - 1.0)).min(t - a);
                by_dual.push((-inside, i, k));
            }
        }
        by_dual.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)).then(a.1.cmp(&b.1)));
        orderings.push(by_dual);
    }

    let mut out = Vec::new();
    for pairs in &orderings {
    for s in &supports {
        let size = s.len() + kk;
        if size > n * kk {
            continue;
        }
        let mut chosen: Vec<(usize, usize)> = Vec::with_capacity(size);
        let mut used = vec![false; pairs.len()];
        for k in 0..kk {
            if let Some(pos) = pairs.iter().position(|&(_, _, pk)| pk == k) {
                used[pos] = true;
                chosen.push((pairs[pos].1, k));
            }
        }
        for (pos, &(_, i, k)) in pairs.iter().enumerate() {
            if chosen.len() >= size {
                break;
            }
            if !used[pos] {
                chosen.push((i, k));
            }
        }
        let mut a = DMatrix::zeros(size, size);
        let mut rhs = DVector::zeros(size);
        for (row, &(i, k)) in chosen.iter().enumerate() {
            for (c, &j) in s.iter().enumerate() {
                a[(row, c)] = x[(i, j)];
            }
            a[(row, s.len() + k)] = 1.0;
            rhs[row] = y[i];
        }
        let Some(sol) = a.lu().solve(&rhs) else { continue };
        if sol.iter().any(|v| !v.is_finite()) {
            continue;
        }
        let mut nb = DVector::zeros(p);
        for (c, &j) in s.iter().enumerate() {
            nb[j] = sol[c];
        }
        let bb: Vec<f64> = (0..kk).map(|k| sol[s.len() + k]).collect();
        out.push((nb, bb));
    }
    }
    out
}

/// Replaces each intercept by the matching lower empirical quantile of
/// `y − Xβ`, which minimizes the objective over `b` for fixed `β`.
fn refresh_intercepts(data: &Dataset, taus: &[f64], beta: &DVector<f64>) -> Vec<f64> {
    let mut r: Vec<f64> = data.residuals(beta).iter().copied().collect();
    r.sort_by(f64::total_cmp);
    quantiles_sorted(&r, taus)
}

struct Candidate {
    beta: DVector<f64>,
    b: Vec<f64>,
    objective: f64,
    kkt: KktOutcome,
}

fn best_polished(data: &Dataset, taus: &[f64], lambda: f64, x: &[f64], subgradient: Option<&[f64]>) -> Option<Candidate> {
    let p = data.p();
    let mut best: Option<Candidate> = None;
    for (beta, _) in vertex_polish(data, taus, &x[..p], &x[p..], subgradient) {
        let b = refresh_intercepts(data, taus, &beta);
        let objective = cqr_objective(data, taus, lambda, &beta, &b);
        if best.as_ref().is_none_or(|c| objective < c.objective) {
            let kkt = kkt_core(data, taus, lambda, &beta, &b);
            best = Some(Candidate { beta, b, objective, kkt });
        }
    }
    best
}

/// Interior-point solve on the given design followed by vertex polishing.
///
/// The loss is summed rather than averaged, so the penalty rows carry weight
/// `2nλ` (each `|β_j|` enters as `2nλ·φ_{1/2}(−β_j)`).
fn solve_direct(data: &Dataset, taus: &[f64], lambda: f64, settings: &SolverSettings) -> Result<(Candidate, SolveReport)> {
    let (n, p) = (data.n(), data.p());
    let kk = taus.len();
    let rows = n * kk + p;
    let x = data.x();
    let mut z = DMatrix::zeros(rows, p + kk);
    let mut y = vec![0.0; rows];
    let mut row_taus = vec![0.5; rows];
    let mut weights = vec![2.0 * n as f64 * lambda; rows];
    for k in 0..kk {
        for i in 0..n {
            let r = k * n + i;
            for j in 0..p {
                z[(r, j)] = x[(i, j)];
            }
            z[(r, p + k)] = 1.0;
            y[r] = data.y()[i];
            row_taus[r] = taus[k];
            weights[r] = 1.0;
        }
    }
    for j in 0..p {
        z[(n * kk + j, j)] = 1.0;
    }
    let sol = check_regression(&z, &y, &row_taus, &weights, settings.tol_primal.min(1e-9))?;
    let beta = DVector::from_column_slice(&sol.coef.as_slice()[..p]);
    let b = refresh_intercepts(data, taus, &beta);
    let raw = Candidate {
        objective: cqr_objective(data, taus, lambda, &beta, &b),
        kkt: kkt_core(data, taus, lambda, &beta, &b),
        beta,
        b,
    };
    if raw.kkt.passes {
        return Ok((raw, sol.report));
    }
    let chosen = match best_polished(data, taus, lambda, sol.coef.as_slice(), Some(&sol.dual.as_slice()[..n * kk])) {
        Some(c) if c.kkt.passes || c.objective <= raw.objective => c,
        _ => raw,
    };
    Ok((chosen, sol.report))
}

/// Designs at most this wide are solved directly without a working set.
const DIRECT_WIDTH: usize = 20;
const WORKING_SET_GROWTH: usize = 10;
const MAX_OUTER_ROUNDS: usize = 60;

fn fit_cqr_core(data: &Dataset, taus: &[f64], lambda: f64, settings: &SolverSettings, method: Method) -> Result<FirstStageFit> {
    settings.validate()?;
    let (n, p) = (data.n(), data.p());
    let kk = taus.len();
    if n < 2 {
        return Err(Error::domain("need at least two observations"));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::domain("lambda must be finite and nonnegative"));
    }
    if lambda == 0.0 && n * kk < p + kk {
        return Err(Error::domain("unpenalized fit needs n·K ≥ p + K"));
    }
    let zero = DVector::zeros(p);
    let b0 = refresh_intercepts(data, taus, &zero);
    let (kkt0, grad0) = kkt_detail(data, taus, lambda, &zero, &b0);
    if kkt0.passes {
        let report = SolveReport {
            iterations: 0,
            primal_residual: 0.0,
            dual_residual: 0.0,
            converged: true,
            objective: cqr_objective(data, taus, lambda, &zero, &b0),
        };
        return Ok(FirstStageFit { beta_hat: zero, b_hat: b0, lambda, method, report });
    }

    if p <= DIRECT_WIDTH || lambda == 0.0 {
        let (c, mut report) = solve_direct(data, taus, lambda, settings)?;
        return finish(c, &mut report, lambda, method);
    }

    // Working set: solve on a few columns, add the coordinates whose
    // subgradient exceeds the penalty, repeat until none do.
    let tol = kkt_tolerance(lambda);
    let mut working: Vec<usize> = top_violators(&grad0, lambda + tol, &[], WORKING_SET_GROWTH);
    let mut beta = DVector::zeros(p);
    let mut b = b0;
    let mut total = SolveReport { iterations: 0, primal_residual: 0.0, dual_residual: 0.0, converged: false, objective: 0.0 };
    for _ in 0..MAX_OUTER_ROUNDS {
        working.sort_unstable();
        let sub = Dataset::new(data.x().select_columns(&working), data.y().clone())?;
        let (c, report) = solve_direct(&sub, taus, lambda, settings)?;
        total.iterations += report.iterations;
        total.primal_residual = report.primal_residual;
        total.dual_residual = report.dual_residual;
        beta.fill(0.0);
        for (w, &j) in working.iter().enumerate() {
            beta[j] = c.beta[w];
        }
        b = c.b;
        let (kkt, grad) = kkt_detail(data, taus, lambda, &beta, &b);
        let extra = top_violators(&grad, lambda + tol, &working, WORKING_SET_GROWTH);
        let done = extra.is_empty() || working.len() + kk >= n * kk;
        let full = Candidate { objective: cqr_objective(data, taus, lambda, &beta, &b), beta: beta.clone(), b: b.clone(), kkt };
        if done || !c.kkt.passes {
            total.converged = report.converged;
            return finish(full, &mut total, lambda, method);
        }
        working.extend(extra);
    }
    let kkt = kkt_core(data, taus, lambda, &beta, &b);
    let full = Candidate { objective: cqr_objective(data, taus, lambda, &beta, &b), beta, b, kkt };
    finish(full, &mut total, lambda, method)
}

/// Up to `limit` coordinates outside `exclude` with `|grad_j| > level`,
/// largest first.
fn top_violators(grad: &DVector<f64>, level: f64, exclude: &[usize], limit: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..grad.len()).filter(|j| grad[*j].abs() > level && !exclude.contains(j)).collect();
    v.sort_by(|&a, &b| grad[b].abs().total_cmp(&grad[a].abs()).then(a.cmp(&b)));
    v.truncate(limit);
    v
}

fn finish(c: Candidate, report: &mut SolveReport, lambda: f64, method: Method) -> Result<FirstStageFit> {
    report.objective = c.objective;
    report.converged = report.converged || c.kkt.passes;
    if !report.converged {
        return Err(Error::NonConvergence { context: format!("{method:?} fit"), report: *report });
    }
    Ok(FirstStageFit { beta_hat: c.beta, b_hat: c.b, lambda, method, report: *report })
}

/// Penalized composite quantile regression over the levels of `grid`.
pub fn fit_pcqr(data: &Dataset, grid: &QuantileGrid, lambda: f64, settings: &SolverSettings) -> Result<FirstStageFit> {
    fit_cqr_core(data, grid.taus(), lambda, settings, Method::Pcqr)
}

/// Penalized regression at a single quantile level.
pub fn fit_pqr(data: &Dataset, tau: f64, lambda: f64, settings: &SolverSettings) -> Result<FirstStageFit> {
    let grid = QuantileGrid::single(tau)?;
    fit_cqr_core(data, grid.taus(), lambda, settings, Method::Pqr { tau })
}

/// Penalized least absolute deviation, the median case of [`fit_pqr`].
pub fn fit_plad(data: &Dataset, lambda: f64, settings: &SolverSettings) -> Result<FirstStageFit> {
    fit_cqr_core(data, &[0.5], lambda, settings, Method::Plad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::empirical_quantile;
    use nalgebra::DMatrix;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_data(n: usize, p: usize, beta: &[f64], seed: u64) -> Dataset {
        let mut rng = crate::rng::substream(seed, 0, crate::rng::Purpose::Oracle);
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let truth = DVector::from_fn(p, |j, _| beta.get(j).copied().unwrap_or(0.0));
        let mut y = &x * truth;
        for v in y.iter_mut() {
            *v += rng.sample::<f64, _>(StandardNormal);
        }
        Dataset::new(x, y).unwrap()
    }

    #[test]
    fn huge_penalty_gives_zero_slope_and_quantile_intercepts() {
        let d = random_data(30, 4, &[1.0, 0.0, -1.0, 0.5], 1);
        let grid = QuantileGrid::equispaced(3).unwrap();
        let fit = fit_pcqr(&d, &grid, 1e3, &SolverSettings::default()).unwrap();
        assert_eq!(fit.sparsity(), 0);
        for (k, &t) in grid.taus().iter().enumerate() {
            assert_eq!(fit.b_hat[k], empirical_quantile(d.y().as_slice(), t).unwrap());
        }
        let kkt = kkt_check_pcqr(&d, &grid, 1e3, &fit).unwrap();
        assert!(kkt.passes && kkt.max_dual_violation <= kkt_tolerance(1e3));
    }

    #[test]
    fn single_slope_matches_grid_search() {
        let d = random_data(11, 1, &[0.8], 2);
        let tau = 0.25;
        let lambda = 0.05;
        let fit = fit_pqr(&d, tau, lambda, &SolverSettings::default()).unwrap();
        // profile the intercept out exactly, then scan the slope
        let profile = |beta: f64| {
            let bv = DVector::from_element(1, beta);
            let r = d.residuals(&bv);
            let b = empirical_quantile(r.as_slice(), tau).unwrap();
            cqr_objective(&d, &[tau], lambda, &bv, &[b])
        };
        let best = (0..=40_000).map(|i| -2.0 + i as f64 * 1e-4).map(profile).fold(f64::INFINITY, f64::min);
        let got = cqr_objective(&d, &[tau], lambda, &fit.beta_hat, &fit.b_hat);
        assert!(got <= best + 1e-9, "{got} vs grid {best}");
        assert!(best - got < 1e-3);
    }

    #[test]
    fn median_level_agrees_with_composite_of_one() {
        let d = random_data(40, 30, &[1.0, -1.0, 0.5], 3);
        let s = SolverSettings::default();
        let a = fit_pqr(&d, 0.5, 0.1, &s).unwrap();
        let b = fit_pcqr(&d, &QuantileGrid::median(), 0.1, &s).unwrap();
        let c = fit_plad(&d, 0.1, &s).unwrap();
        for j in 0..30 {
            assert!((a.beta_hat[j] - b.beta_hat[j]).abs() < 1e-6);
            assert!((a.beta_hat[j] - c.beta_hat[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn kkt_rejects_a_perturbed_fit() {
        let d = random_data(25, 3, &[1.0, 0.0, -0.5], 4);
        let grid = QuantileGrid::equispaced(2).unwrap();
        let lambda = 0.05;
        let fit = fit_pcqr(&d, &grid, lambda, &SolverSettings::default()).unwrap();
        assert!(kkt_check_pcqr(&d, &grid, lambda, &fit).unwrap().passes);
        let mut bad = fit.clone();
        bad.beta_hat[0] += 10.0 * kkt_tolerance(lambda).max(1e-3);
        let out = kkt_check_pcqr(&d, &grid, lambda, &bad).unwrap();
        assert!(!out.passes);
        assert!(cqr_objective(&d, grid.taus(), lambda, &bad.beta_hat, &bad.b_hat) > fit.report.objective);
    }

    #[test]
    fn sparsity_shrinks_along_penalty_path() {
        let d = random_data(60, 40, &[1.5, -1.0, 0.8, 0.0, 0.5], 5);
        let grid = QuantileGrid::equispaced(3).unwrap();
        let mut last = usize::MAX;
        for lambda in [0.05, 0.1, 0.2, 0.4, 0.8] {
            let fit = fit_pcqr(&d, &grid, lambda, &SolverSettings::default()).unwrap();
            assert!(fit.sparsity() <= last);
            last = fit.sparsity();
        }
    }

    #[test]
    fn fit_beats_truth_and_zero() {
        let truth = [1.0, -1.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0];
        let grid = QuantileGrid::equispaced(5).unwrap();
        for seed in 0..3 {
            let d = random_data(50, 8, &truth, 10 + seed);
            let fit = fit_pcqr(&d, &grid, 0.1, &SolverSettings::default()).unwrap();
            let star = DVector::from_column_slice(&truth);
            let zero = DVector::zeros(8);
            let at = |b: &DVector<f64>| {
                let q = crate::first_stage::derive_b_from_beta(&d, b, &grid).unwrap();
                cqr_objective(&d, grid.taus(), 0.1, b, &q)
            };
            assert!(fit.report.objective <= at(&star) + 1e-9);
            assert!(fit.report.objective <= at(&zero) + 1e-9);
        }
    }
}
