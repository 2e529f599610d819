//! Variance constants of the composite score and the efficiency gain over
//! the square-loss correction.

use dcqr::data::{NoiseModel, QuantileGrid, SimulationDesign};
use dcqr::first_stage::{fit_plad, PenaltyRule};
use dcqr::nuisance::{analytic_theta, are_vs_square, estimate_theta, sigma_k_sq, DensitySpec};
use dcqr::optim::SolverSettings;

fn main() -> dcqr::Result<()> {
    println!("{:>4} {:>10} {:>10} {:>10}", "K", "σ_K²", "ARE gauss", "ARE t3");
    for k in [1, 3, 9, 19, 99] {
        let grid = QuantileGrid::equispaced(k)?;
        let g = are_vs_square(&grid, &NoiseModel::gaussian(1.0))?;
        let t = are_vs_square(&grid, &NoiseModel::student_t(3.0))?;
        println!("{k:>4} {:>10.4} {g:>10.4} {t:>10.4}", sigma_k_sq(&grid));
    }
    // Cauchy noise has no variance, so the square-loss correction has no ARE.
    println!("ARE under Cauchy noise defined: {}", are_vs_square(&QuantileGrid::equispaced(9)?, &NoiseModel::cauchy(1.0)).is_ok());

    // θ̂ from first-stage residuals against the analytic θ_K.
    let noise = NoiseModel::student_t(3.0);
    let design = SimulationDesign::banded(400, 50, 5, noise.clone(), 8)?;
    let (data, _) = design.sampler()?.draw(0);
    let grid = QuantileGrid::equispaced(9)?;
    let fit = fit_plad(&data, PenaltyRule::default().quantile_lambda(400, 50, 1), &SolverSettings::default())?;
    let r = data.residuals(&fit.beta_hat);
    let known = estimate_theta(r.as_slice(), &grid, &DensitySpec::Known { noise: noise.clone() }, 50, fit.sparsity())?;
    let est = estimate_theta(r.as_slice(), &grid, &DensitySpec::DefaultBandwidth, 50, fit.sparsity())?;
    println!("θ_K = {:.3}; θ̂ known density {:.3}; θ̂ estimated density {:.3} (h = {:?})", analytic_theta(&grid, &noise)?, known.theta_hat, est.theta_hat, est.mode);
    Ok(())
}
