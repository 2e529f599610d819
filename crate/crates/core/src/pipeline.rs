//! One-call fitting and de-biasing for the method combinations used by the
//! experiments: a first stage, a correction, and a quantile grid.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, QuantileGrid};
use crate::decorrelate::{debias_cq, debias_square, DebiasedEstimate, DecorrelationMatrix};
use crate::error::{Error, Result};
use crate::first_stage::{fit_lasso, fit_pcqr, fit_plad, scaled_lasso, truncate_to_s, FirstStageFit, PenaltyRule};
use crate::nuisance::{estimate_theta, DensitySpec, NuisanceEstimates};
use crate::optim::SolverSettings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FirstStage {
    Pcqr,
    Plad,
    Lasso,
    TruncatedPcqr { s: usize },
    TruncatedPlad { s: usize },
}

impl FirstStage {
    pub fn label(&self) -> String {
        match self {
            FirstStage::Pcqr => "PCQR".into(),
            FirstStage::Plad => "PLAD".into(),
            FirstStage::Lasso => "Lasso".into(),
            FirstStage::TruncatedPcqr { s } => format!("PCQR[{s}]"),
            FirstStage::TruncatedPlad { s } => format!("PLAD[{s}]"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DebiasKind {
    Cq,
    Square,
}

/// A first stage, a correction and the grid used by the composite correction
/// (and by composite first stages).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub first_stage: FirstStage,
    pub debias: DebiasKind,
    pub grid: QuantileGrid,
}

impl MethodSpec {
    pub fn new(first_stage: FirstStage, debias: DebiasKind, grid: QuantileGrid) -> Self {
        MethodSpec { first_stage, debias, grid }
    }

    /// The six combinations of {PCQR, PLAD, Lasso} × {CQ, Square} on `grid`.
    pub fn table(grid: &QuantileGrid) -> Vec<MethodSpec> {
        let mut out = Vec::new();
        for debias in [DebiasKind::Cq, DebiasKind::Square] {
            for fs in [FirstStage::Pcqr, FirstStage::Plad, FirstStage::Lasso] {
                out.push(MethodSpec::new(fs, debias, grid.clone()));
            }
        }
        out
    }

    /// Single median level after a PLAD fit.
    pub fn single_quantile() -> Self {
        MethodSpec::new(FirstStage::Plad, DebiasKind::Cq, QuantileGrid::median())
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tail = match self.debias {
            DebiasKind::Cq if self.grid.len() == 1 => format!("Q({})", self.grid.taus()[0]),
            DebiasKind::Cq => "CQ".into(),
            DebiasKind::Square => "Square".into(),
        };
        write!(f, "{} + {}", self.first_stage.label(), tail)
    }
}

/// Penalties, solver settings and density handling shared by every method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitContext {
    pub rule: PenaltyRule,
    pub solver: SolverSettings,
    pub density: DensitySpec,
}

impl FitContext {
    pub fn new(density: DensitySpec) -> Self {
        FitContext { rule: PenaltyRule::default(), solver: SolverSettings::default(), density }
    }
}

/// Scaled-Lasso noise level, computed at most once per dataset.
#[derive(Debug, Default)]
pub struct NoiseLevel(Option<f64>);

impl NoiseLevel {
    pub fn get(&mut self, data: &Dataset, ctx: &FitContext) -> Result<f64> {
        if let Some(s) = self.0 {
            return Ok(s);
        }
        let (_, sigma) = scaled_lasso(data, ctx.rule.scaled_lasso_lambda(data.n(), data.p()), &ctx.solver)?;
        self.0 = Some(sigma);
        Ok(sigma)
    }
}

/// Fits `first_stage` at the default penalty of `ctx.rule`.
pub fn fit_first_stage(first_stage: FirstStage, data: &Dataset, grid: &QuantileGrid, ctx: &FitContext, noise: &mut NoiseLevel) -> Result<FirstStageFit> {
    let (n, p) = (data.n(), data.p());
    let rule = &ctx.rule;
    match first_stage {
        FirstStage::Pcqr => fit_pcqr(data, grid, rule.quantile_lambda(n, p, grid.len()), &ctx.solver),
        FirstStage::Plad => fit_plad(data, rule.quantile_lambda(n, p, 1), &ctx.solver),
        FirstStage::Lasso => {
            let sigma = noise.get(data, ctx)?;
            fit_lasso(data, rule.lasso_lambda(n, p, sigma), &ctx.solver)
        }
        FirstStage::TruncatedPcqr { s } => truncate_to_s(&fit_first_stage(FirstStage::Pcqr, data, grid, ctx, noise)?, s.min(p)),
        FirstStage::TruncatedPlad { s } => truncate_to_s(&fit_first_stage(FirstStage::Plad, data, grid, ctx, noise)?, s.min(p)),
    }
}

/// Residual quantiles and density terms for the composite correction.
pub fn nuisance_for(fit: &FirstStageFit, data: &Dataset, grid: &QuantileGrid, ctx: &FitContext) -> Result<NuisanceEstimates> {
    let r = data.residuals(&fit.beta_hat);
    estimate_theta(r.as_slice(), grid, &ctx.density, data.p(), fit.sparsity())
}

/// Applies the correction of `method` to an existing first-stage fit.
pub fn debias_fit(method: &MethodSpec, fit: &FirstStageFit, m: &DecorrelationMatrix, data: &Dataset, ctx: &FitContext, noise: &mut NoiseLevel) -> Result<DebiasedEstimate> {
    match method.debias {
        DebiasKind::Cq => {
            let nu = nuisance_for(fit, data, &method.grid, ctx)?;
            debias_cq(fit, &nu, m, data, &method.grid)
        }
        DebiasKind::Square => debias_square(fit, noise.get(data, ctx)?, m, data),
    }
}

/// First stage plus correction in one call.
pub fn run_method(method: &MethodSpec, m: &DecorrelationMatrix, data: &Dataset, ctx: &FitContext, noise: &mut NoiseLevel) -> Result<DebiasedEstimate> {
    if m.p != data.p() {
        return Err(Error::dim("matrix and data disagree on p"));
    }
    let fit = fit_first_stage(method.first_stage, data, &method.grid, ctx, noise)?;
    debias_fit(method, &fit, m, data, ctx, noise)
}
