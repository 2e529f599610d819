use crate::data::QuantileGrid;
use crate::error::{Error, Result};

fn validate_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("quantile level {tau} outside (0, 1)")))
    }
}

/// The check function `τ·t₊ + (1−τ)·t₋`.
pub fn check_loss(tau: f64, t: f64) -> Result<f64> {
    validate_tau(tau)?;
    Ok(check(tau, t))
}

#[inline]
pub(crate) fn check(tau: f64, t: f64) -> f64 {
    if t >= 0.0 {
        tau * t
    } else {
        (tau - 1.0) * t
    }
}

/// `Σᵢ φ_τ(aᵢ − x)`.
pub fn check_objective(values: &[f64], tau: f64, x: f64) -> f64 {
    values.iter().map(|&a| check(tau, a - x)).sum()
}

/// Index (0-based) of the lower empirical τ-quantile among `n` sorted values:
/// the ⌈τn⌉-th order statistic.
pub(crate) fn lower_rank(tau: f64, n: usize) -> usize {
    // τ·n that is an integer in exact arithmetic can land one ulp above it.
    let pos = tau * n as f64;
    let k = (pos - 1e-10 * pos.max(1.0)).ceil() as usize;
    k.clamp(1, n) - 1
}

/// Lower empirical quantile: the ⌈τn⌉-th order statistic.
///
/// This is always a minimizer of `Σᵢ φ_τ(aᵢ − x)`, and the smallest one.
pub fn empirical_quantile(values: &[f64], tau: f64) -> Result<f64> {
    validate_tau(tau)?;
    if values.is_empty() {
        return Err(Error::domain("empirical quantile of an empty sample"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::domain("empirical quantile of a sample containing NaN"));
    }
    let mut v = values.to_vec();
    let k = lower_rank(tau, v.len());
    let (_, kth, _) = v.select_nth_unstable_by(k, |a, b| a.total_cmp(b));
    Ok(*kth)
}

/// Lower empirical quantiles at every level of `grid` (one sort).
pub fn empirical_quantiles(values: &[f64], grid: &QuantileGrid) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::domain("empirical quantile of an empty sample"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::domain("empirical quantile of a sample containing NaN"));
    }
    let mut v = values.to_vec();
    v.sort_unstable_by(|a, b| a.total_cmp(b));
    Ok(quantiles_sorted(&v, grid.taus()))
}

pub(crate) fn quantile_sorted(sorted: &[f64], tau: f64) -> f64 {
    sorted[lower_rank(tau, sorted.len())]
}

pub(crate) fn quantiles_sorted(sorted: &[f64], taus: &[f64]) -> Vec<f64> {
    taus.iter().map(|&t| quantile_sorted(sorted, t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn check_loss_examples() {
        assert_eq!(check_loss(0.5, 2.0).unwrap(), 1.0);
        assert!((check_loss(0.3, -1.0).unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(check_loss(0.9, 10.0).unwrap(), 9.0);
        assert!(check_loss(0.0, 1.0).is_err());
        assert!(check_loss(1.0, 1.0).is_err());
        assert!(check_loss(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(empirical_quantile(&[1.0, 2.0, 3.0, 4.0], 0.5).unwrap(), 2.0);
        for tau in [0.01, 0.5, 0.99] {
            assert_eq!(empirical_quantile(&[7.0], tau).unwrap(), 7.0);
        }
        assert_eq!(empirical_quantile(&[3.0, 1.0, 2.0], 1.0 / 3.0).unwrap(), 1.0);
        assert!(empirical_quantile(&[], 0.5).is_err());
        assert!(empirical_quantile(&[1.0], 1.5).is_err());
    }

    #[test]
    fn one_third_of_three_is_smallest_grid_minimizer() {
        // Brute-force over a fine grid: the set of minimizers of
        // Σ φ_{1/3}(aᵢ − x) for a = {3,1,2} is [1,2]; its smallest point is 1.
        let a = [3.0, 1.0, 2.0];
        let tau = 1.0 / 3.0;
        let grid: Vec<f64> = (0..=4000).map(|i| i as f64 * 0.001).collect();
        let best = grid
            .iter()
            .map(|&x| check_objective(&a, tau, x))
            .fold(f64::INFINITY, f64::min);
        let first = grid
            .iter()
            .copied()
            .find(|&x| check_objective(&a, tau, x) <= best + 1e-12)
            .unwrap();
        assert!((first - 1.0).abs() < 1e-9);
        assert_eq!(empirical_quantile(&a, tau).unwrap(), first);
    }

    #[test]
    fn rank_is_robust_to_rounding() {
        // 0.7 * 10 = 7.000000000000001 in floating point.
        assert_eq!(lower_rank(0.7, 10), 6);
        assert_eq!(lower_rank(0.2, 5), 0);
        assert_eq!(lower_rank(0.8, 5), 3);
        assert_eq!(lower_rank(0.001, 5), 0);
    }

    proptest! {
        #[test]
        fn check_loss_closed_forms_agree(tau in 0.001f64..0.999, t in -1e3f64..1e3) {
            let a = check_loss(tau, t).unwrap();
            let b = t.abs() / 2.0 + (tau - 0.5) * t;
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + t.abs()));
            prop_assert!(a >= 0.0);
        }

        #[test]
        fn empirical_quantile_minimizes_check_objective(
            v in prop::collection::vec(-100.0f64..100.0, 1..40),
            tau in 0.01f64..0.99,
        ) {
            let q = empirical_quantile(&v, tau).unwrap();
            let fq = check_objective(&v, tau, q);
            let mut s = v.clone();
            s.sort_by(|a, b| a.total_cmp(b));
            let mut candidates = s.clone();
            candidates.extend(s.windows(2).map(|w| 0.5 * (w[0] + w[1])));
            for c in candidates {
                prop_assert!(fq <= check_objective(&v, tau, c) + 1e-10);
            }
        }
    }
}
