//! Nonsmooth convex optimization kernels shared by the estimators:
//! proximal maps, projections and a two-block ADMM engine.

mod admm;
mod interior;
mod prox;

pub use interior::{check_regression, CheckRegressionSolution};
pub use admm::{admm_solve, AdmmIterate, AdmmKernel, LinearOperator, Splitting};
pub use prox::{
    prox_check, project_linf, soft_threshold, soft_threshold_scalar, CheckSum, LinfBall, L1Norm, Prox,
    SquaredDistance, Stacked, ZeroFn,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    /// ADMM penalty parameter.
    pub rho: f64,
    pub max_iter: usize,
    /// Absolute tolerance on the RMS primal residual.
    pub tol_primal: f64,
    /// Absolute tolerance on the RMS dual residual.
    pub tol_dual: f64,
    /// Relaxation parameter in [1, 1.8].
    pub over_relaxation: f64,
    /// Rebalance `rho` from the residual ratio every few dozen iterations,
    /// refactoring the linear system when it changes.
    pub adaptive_rho: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            rho: 1.0,
            max_iter: 10_000,
            tol_primal: 1e-6,
            tol_dual: 1e-6,
            over_relaxation: 1.5,
            adaptive_rho: false,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::domain("rho must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::domain("max_iter must be at least 1"));
        }
        if !(self.tol_primal > 0.0 && self.tol_dual > 0.0) {
            return Err(Error::domain("tolerances must be positive"));
        }
        if !(1.0..=1.8).contains(&self.over_relaxation) {
            return Err(Error::domain("over_relaxation must lie in [1, 1.8]"));
        }
        Ok(())
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_adaptive_rho(mut self, adaptive: bool) -> Self {
        self.adaptive_rho = adaptive;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol_primal = tol;
        self.tol_dual = tol;
        self
    }
}

/// Outcome of an iterative solve. Residuals are root-mean-square values, so
/// they compare directly with the tolerances in [`SolverSettings`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub converged: bool,
    pub objective: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn settings_validation() {
        assert!(SolverSettings::default().validate().is_ok());
        assert!(SolverSettings::default().with_rho(0.0).validate().is_err());
        assert!(SolverSettings::default().with_max_iter(0).validate().is_err());
        assert!(SolverSettings::default().with_tol(0.0).validate().is_err());
        let mut s = SolverSettings::default();
        s.over_relaxation = 2.0;
        assert!(s.validate().is_err());
    }
}
