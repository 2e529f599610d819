//! Max-type tests over a group of coordinates, calibrated by the Gaussian
//! multiplier bootstrap and by simulated quantile scores.

use dcqr::data::{NoiseModel, QuantileGrid, SimulationDesign};
use dcqr::decorrelate::{build_m_rows, default_gammas, Variant};
use dcqr::inference::{simulated_psi_test, simultaneous_test, simultaneous_test_two_sided};
use dcqr::nuisance::DensitySpec;
use dcqr::pipeline::{run_method, DebiasKind, FirstStage, FitContext, MethodSpec, NoiseLevel};

fn main() -> dcqr::Result<()> {
    let noise = NoiseModel::student_t(3.0);
    let design = SimulationDesign::banded(200, 100, 5, noise.clone(), 31)?;
    let (data, _) = design.sampler()?.draw(0);
    let ctx = FitContext::new(DensitySpec::Known { noise });
    let grid = QuantileGrid::equispaced(9)?;
    let method = MethodSpec::new(FirstStage::Plad, DebiasKind::Cq, grid.clone());
    let gammas = default_gammas(data.n(), data.p())?;

    for (label, group) in [("null group 10..30", (10..30).collect::<Vec<_>>()), ("group with signal 0..20", (0..20).collect())] {
        // The tests use the l1-minimal rows for the group only.
        let m = build_m_rows(&data, &group, &gammas, Variant::L1Min, &ctx.solver)?;
        let est = run_method(&method, &m, &data, &ctx, &mut NoiseLevel::default())?;
        let zeros = vec![0.0; group.len()];
        let one = simultaneous_test(&est, &m, &data, &group, &zeros, 0.05, 500, 1)?;
        let two = simultaneous_test_two_sided(&est, &m, &data, &group, &zeros, 0.05, 500, 1)?;
        let sim = simulated_psi_test(&est, &m, &data, &grid, &group, &zeros, 0.05, 500, 1)?;
        println!("{label}");
        for (name, r) in [("multiplier", &one), ("two-sided", &two), ("simulated", &sim)] {
            println!("  {name:<10} T = {:>7.3}  c = {:.3}  reject {}", r.t_g, r.c_alpha, r.reject);
        }
    }
    Ok(())
}
