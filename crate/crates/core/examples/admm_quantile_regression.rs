//! Median regression two ways: the generic ADMM engine and the
//! interior-point check-loss solver.

use dcqr::optim::{admm_solve, check_regression, CheckSum, L1Norm, SolverSettings, Splitting};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> dcqr::Result<()> {
    let (n, p) = (120, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
    let beta = [1.0, -2.0, 0.0, 0.5];
    let y: Vec<f64> = (0..n).map(|i| (0..p).map(|j| x[(i, j)] * beta[j]).sum::<f64>() + rng.random_range(-0.3..0.3)).collect();

    // minimize n⁻¹ Σ phi_0.5(y − Xβ):  f(Aβ + c) with A = −X, c = y
    let a = -x.clone();
    let f = CheckSum::new(vec![0.5; n], 1.0 / n as f64);
    let problem = Splitting { a: &a, c: &y, f: &f, g: None, p: None, q: None };
    let settings = SolverSettings::default().with_tol(1e-9).with_max_iter(50_000);
    let (admm, report) = admm_solve(&problem, &settings, None)?;
    println!("ADMM       {:?} ({} iterations)", round(&admm), report.iterations);

    let ip = check_regression(&x, &y, &vec![0.5; n], &vec![1.0; n], 1e-10)?;
    println!("interior   {:?}", round(ip.coef.as_slice()));

    // Same loss with an l1 penalty on β.
    let l1 = L1Norm::uniform(0.05, p);
    let lasso_like = Splitting { g: Some(&l1), ..problem };
    let (pen, _) = admm_solve(&lasso_like, &settings, None)?;
    println!("penalized  {:?}", round(&pen));
    Ok(())
}

fn round(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1e4).round() / 1e4).collect()
}
