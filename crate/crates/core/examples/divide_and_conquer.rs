//! Split a large sample into blocks, de-bias each, and average; also the
//! file-based worker flow.

use dcqr::data::{NoiseModel, QuantileGrid, SimulationDesign};
use dcqr::distributed::{aggregate, dnc_debias, load_splits, make_split_plan, save_split, work_split, DncOptions};
use dcqr::nuisance::DensitySpec;
use dcqr::pipeline::FitContext;

fn main() -> dcqr::Result<()> {
    let noise = NoiseModel::student_t(3.0);
    let design = SimulationDesign::banded(800, 50, 5, noise.clone(), 77)?;
    let (data, _) = design.sampler()?.draw(0);
    let options = DncOptions::truncated_pcqr(5, QuantileGrid::equispaced(9)?, FitContext::new(DensitySpec::Known { noise }));

    for m in [1, 4] {
        let plan = make_split_plan(data.n(), m, 3)?;
        let agg = dnc_debias(&data, &plan, &options)?;
        let ci = agg.ci(0, 0.05)?;
        println!("m = {m}: blocks of {}, β̄_0 = {:.3}, CI [{:.3}, {:.3}]", plan.block_size, agg.beta_bar_d[0], ci.lo, ci.hi);
    }

    // Workers write one file each; the aggregator only reads files.
    let dir = std::env::temp_dir().join("dcqr_dnc_example");
    std::fs::create_dir_all(&dir)?;
    let plan = make_split_plan(data.n(), 4, 3)?;
    for l in 0..plan.m {
        let (est, m) = work_split(&plan.split(&data, l)?, &options)?;
        save_split(&dir, l, &est, &m)?;
    }
    let agg = aggregate(load_splits(&dir)?.into_iter().map(|s| s.estimate).collect())?;
    println!("from files: β̄_0 = {:.3} over N = {}", agg.beta_bar_d[0], agg.n_used());
    Ok(())
}
