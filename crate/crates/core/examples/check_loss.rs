//! The check (pinball) loss and the quantiles it defines.

use dcqr::data::{check_loss, check_objective, empirical_quantile, empirical_quantiles, QuantileGrid};
use dcqr::optim::prox_check;

fn main() -> dcqr::Result<()> {
    for t in [-2.0, -0.5, 0.0, 0.5, 2.0] {
        println!("phi_0.25({t:>4}) = {:.3}", check_loss(0.25, t)?);
    }

    let sample = [3.1, -0.4, 2.2, 0.9, 5.0, 1.7, -1.3, 0.2];
    let q = empirical_quantile(&sample, 0.25)?;
    // The empirical quantile minimizes the summed check loss.
    let here = check_objective(&sample, 0.25, q);
    let nearby = check_objective(&sample, 0.25, q + 0.1).min(check_objective(&sample, 0.25, q - 0.1));
    println!("0.25-quantile {q:.2}: loss {here:.3} <= {nearby:.3} at q ± 0.1");

    let grid = QuantileGrid::equispaced(4)?;
    println!("levels {:?} -> quantiles {:?}", grid.taus(), empirical_quantiles(&sample, &grid)?);

    // Proximal map of w·phi_tau: shrinks toward 0 asymmetrically.
    for v in [-1.0, -0.1, 0.1, 1.0] {
        println!("prox_(0.5·phi_0.25)({v:>4}) = {:.3}", prox_check(0.25, 0.5, v));
    }
    Ok(())
}
