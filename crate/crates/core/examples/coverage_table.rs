//! A small Monte-Carlo coverage table, configured from TOML and written as
//! CSV to stdout.

use dcqr::harness::{coverage_study, write_coverage_csv, ExperimentConfig};

const CONFIG: &str = r#"
seed = 5
reps = 40

[design]
n = 150
p = 40
s = 5
noise = { kind = "cauchy", scale = 1.0 }

[[methods]]
first_stage = "plad"
debias = "cq"

[[methods]]
first_stage = "plad"
debias = "cq"
taus = [0.5]

[[methods]]
first_stage = "lasso"
debias = "square"
"#;

fn main() -> dcqr::Result<()> {
    let config = ExperimentConfig::from_toml(CONFIG)?;
    let study = coverage_study(&config)?;
    write_coverage_csv(&study.rows, std::io::stdout())?;

    // Per-coordinate lengths behind the averages.
    let first = &study.coordinates[..config.design.p];
    let widest = first.iter().max_by(|a, b| a.al.total_cmp(&b.al)).expect("nonempty");
    println!("widest {} interval: β_{} (mean length {:.3})", widest.method, widest.j, widest.al);
    Ok(())
}
