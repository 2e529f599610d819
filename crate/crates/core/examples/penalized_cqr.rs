//! Penalized composite quantile regression, its KKT certificate, and the
//! single-quantile and truncated variants.

use dcqr::data::{NoiseModel, QuantileGrid, SimulationDesign};
use dcqr::first_stage::{fit_pcqr, fit_plad, kkt_check_pcqr, truncate_to_s, PenaltyRule};
use dcqr::optim::SolverSettings;

fn main() -> dcqr::Result<()> {
    let design = SimulationDesign::banded(200, 100, 5, NoiseModel::cauchy(1.0), 1)?;
    let (data, _) = design.sampler()?.draw(0);
    let grid = QuantileGrid::equispaced(9)?;
    let rule = PenaltyRule::default();
    let settings = SolverSettings::default();

    let lambda = rule.quantile_lambda(data.n(), data.p(), grid.len());
    let fit = fit_pcqr(&data, &grid, lambda, &settings)?;
    let kkt = kkt_check_pcqr(&data, &grid, lambda, &fit)?;
    println!("PCQR  λ = {lambda:.4}: support {:?}, KKT violation {:.2e} (passes: {})", fit.support(), kkt.max_dual_violation, kkt.passes);
    println!("      intercepts {:?}", fit.b_hat.iter().map(|b| format!("{b:.2}")).collect::<Vec<_>>());

    let lad = fit_plad(&data, rule.quantile_lambda(data.n(), data.p(), 1), &settings)?;
    println!("PLAD  support {:?}", lad.support());

    let top = truncate_to_s(&fit, 5)?;
    let err = (&top.beta_hat - design.beta_star()).norm();
    println!("PCQR truncated to 5: support {:?}, ‖β̂ − β*‖ = {err:.3}", top.support());
    Ok(())
}
