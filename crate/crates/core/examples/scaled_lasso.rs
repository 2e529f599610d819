//! Noise level by the scaled Lasso, then a Lasso fit at the implied penalty.

use dcqr::data::{NoiseModel, SimulationDesign};
use dcqr::first_stage::{fit_lasso, scaled_lasso, PenaltyRule};
use dcqr::optim::SolverSettings;

fn main() -> dcqr::Result<()> {
    let rule = PenaltyRule::default();
    let settings = SolverSettings::default();
    for variance in [0.25, 1.0, 4.0] {
        let design = SimulationDesign::banded(200, 250, 5, NoiseModel::gaussian(variance), 3)?;
        let (data, _) = design.sampler()?.draw(0);
        let (n, p) = (data.n(), data.p());
        let (_, sigma) = scaled_lasso(&data, rule.scaled_lasso_lambda(n, p), &settings)?;
        let fit = fit_lasso(&data, rule.lasso_lambda(n, p, sigma), &settings)?;
        let support = fit.support();
        println!("true σ = {:.2}  σ̂ = {sigma:.3}  Lasso keeps {} coordinates, first {:?}", variance.sqrt(), support.len(), &support[..6.min(support.len())]);
    }
    Ok(())
}
