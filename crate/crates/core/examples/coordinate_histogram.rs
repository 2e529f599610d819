//! Replication distribution of a signal and a null de-biased coordinate.

use dcqr::data::{NoiseModel, QuantileGrid, SimulationDesign};
use dcqr::harness::{run_histogram, ExperimentConfig};
use dcqr::pipeline::MethodSpec;

fn main() -> dcqr::Result<()> {
    let mut config = ExperimentConfig::benchmark(NoiseModel::gaussian(1.0), 60, 17)?;
    config.design = SimulationDesign::banded(200, 60, 5, NoiseModel::gaussian(1.0), 17)?;
    config.methods = vec![MethodSpec::table(&QuantileGrid::equispaced(9)?)[1].clone()];

    for rec in run_histogram(&config, &[2, 5], 12)? {
        println!("{} β_{} (truth {}): mean {:.3} ± {:.3}", rec.method, rec.j, rec.truth, rec.mean, rec.std_error);
        let peak = *rec.counts.iter().max().unwrap_or(&1) as f64;
        for (b, c) in rec.counts.iter().enumerate() {
            let bar = "#".repeat((30.0 * *c as f64 / peak).round() as usize);
            println!("  {:>7.3} {bar}", rec.edges[b]);
        }
    }
    Ok(())
}
