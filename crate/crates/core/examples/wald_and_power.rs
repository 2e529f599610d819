//! A Wald-type test on a linear contrast, and the single-coordinate power
//! curve.

use dcqr::data::{NoiseModel, QuantileGrid, SimulationDesign};
use dcqr::decorrelate::{build_m, default_gammas, Variant};
use dcqr::inference::{power_gn, wald_test};
use dcqr::nuisance::{analytic_theta, sigma_k_sq, DensitySpec};
use dcqr::pipeline::{run_method, FitContext, MethodSpec, NoiseLevel, DebiasKind, FirstStage};
use nalgebra::{DMatrix, DVector};

fn main() -> dcqr::Result<()> {
    let noise = NoiseModel::gaussian(1.0);
    let design = SimulationDesign::banded(200, 80, 5, noise.clone(), 9)?;
    let sampler = design.sampler()?;
    let (data, _) = sampler.draw(0);
    let ctx = FitContext::new(DensitySpec::Known { noise: noise.clone() });
    let m = build_m(&data, &default_gammas(200, 80)?, Variant::VarianceMin, &ctx.solver)?;
    let grid = QuantileGrid::equispaced(9)?;
    let est = run_method(&MethodSpec::new(FirstStage::Plad, DebiasKind::Cq, grid.clone()), &m, &data, &ctx, &mut NoiseLevel::default())?;

    // β_0 − β_1 = 0 (true) and β_5 = 0 (true); then β_0 = 0 (false).
    let mut q = DMatrix::zeros(2, 80);
    q[(0, 0)] = 1.0;
    q[(0, 1)] = -1.0;
    q[(1, 5)] = 1.0;
    let res = wald_test(&est, &m, &data, &q, &DVector::zeros(2), 0.05)?;
    println!("contrasts at truth: standardized {:?}, reject {}", res.standardized.as_slice(), res.reject);
    let single = DMatrix::from_fn(1, 80, |_, j| if j == 0 { 1.0 } else { 0.0 });
    let res = wald_test(&est, &m, &data, &single, &DVector::zeros(1), 0.05)?;
    println!("β_0 = 0: standardized {:.1}, reject {}", res.standardized[0], res.reject);

    // Local alternatives a·n^(γ−1/2): power rises from α at a = 0.
    let theta = analytic_theta(&grid, &noise)?;
    let sk = sigma_k_sq(&grid).sqrt();
    let omega_00 = sampler.sigma().clone().try_inverse().expect("positive definite")[(0, 0)];
    for a in [0.0, 0.05, 0.1, 0.15, 0.2, 0.3] {
        println!("a = {a}: power {:.3}", power_gn(0.05, 0.0, a, 200, theta, sk, omega_00)?);
    }
    Ok(())
}
