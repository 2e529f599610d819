//! Command-line front end. Every command writes its outputs and a
//! `manifest.json` into `--out`; nothing written depends on wall-clock time
//! or thread count.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use super::config::{DensityChoice, ExperimentConfig, FirstStageName, GammaChoice, MethodEntry};
use super::coverage::{coverage_study, run_histogram};
use super::emit::{content_hash, write_coverage, write_histograms, write_manifest, write_records, Format, Manifest};
use crate::data::{Dataset, NoiseModel};
use crate::decorrelate::{build_m, build_m_rows, DebiasedEstimate, Variant};
use crate::distributed::{aggregate, load_splits, make_split_plan, save_split, work_split, DncOptions, SplitPlan};
use crate::error::{Error, Result};
use crate::first_stage::PenaltyRule;
use crate::inference::{all_cis, normal_cdf, simulated_psi_test, simultaneous_test, simultaneous_test_two_sided, DEFAULT_BOOTSTRAP};
use crate::nuisance::DensitySpec;
use crate::optim::SolverSettings;
use crate::pipeline::{fit_first_stage, run_method, DebiasKind, FitContext, MethodSpec, NoiseLevel};

#[derive(Debug, Parser, Serialize)]
#[command(name = "dcqr", version, about = "De-biased composite quantile inference for sparse linear models")]
pub struct Cli {
    /// Experiment TOML; also supplies penalty, solver and radii settings.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory (default: the config's output_dir, else `out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "csv")]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum Command {
    /// Draw one dataset from the configured design.
    Simulate {
        /// Replication index.
        #[arg(long, default_value_t = 0)]
        rep: u64,
    },
    /// Fit a first stage.
    Fit(FitArgs),
    /// Fit, de-bias, and write the estimate and decorrelation matrix.
    Debias(DebiasArgs),
    /// Confidence intervals from a saved estimate.
    Ci(CiArgs),
    /// Per-coordinate tests of `β_j = 0` from a saved estimate.
    Test(TestArgs),
    /// Bootstrap test of `β_G = β0_G` over a group of coordinates.
    BootTest(BootArgs),
    /// Divide-and-conquer steps.
    #[command(subcommand)]
    Dnc(DncCommand),
    /// Monte-Carlo coverage table for the configured methods.
    Coverage,
    /// Replication histograms of chosen de-biased coordinates.
    Histogram {
        /// 0-based coordinates.
        #[arg(long, value_delimiter = ',', required = true)]
        coords: Vec<usize>,
        #[arg(long, default_value_t = 30)]
        bins: usize,
    },
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MethodArgs {
    #[arg(long, value_enum, default_value = "plad")]
    pub first_stage: FirstStageName,
    #[arg(long, value_enum, default_value = "cq")]
    pub debias: DebiasKind,
    /// Number of equispaced quantile levels (default 9).
    #[arg(long, conflicts_with = "taus")]
    pub k: Option<usize>,
    /// Explicit quantile levels.
    #[arg(long, value_delimiter = ',')]
    pub taus: Option<Vec<f64>>,
    /// Keep only this many of the largest first-stage entries.
    #[arg(long)]
    pub truncate: Option<usize>,
    /// Density at the residual quantiles: estimated, or known (needs --noise).
    #[arg(long, value_enum, default_value = "estimated")]
    pub density: DensityChoice,
    /// Noise law for a known density: gaussian[:variance], t:df or cauchy[:scale].
    #[arg(long)]
    pub noise: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    /// Dataset (.csv, or the binary format).
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub method: MethodArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct DebiasArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub method: MethodArgs,
    /// De-bias only these 0-based coordinates (default: all).
    #[arg(long, value_delimiter = ',')]
    pub coords: Option<Vec<usize>>,
}

#[derive(Debug, Args, Serialize)]
pub struct CiArgs {
    /// `estimate.json` written by `debias`.
    #[arg(long)]
    pub estimate: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct TestArgs {
    #[arg(long)]
    pub estimate: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// 0-based coordinates (default: all de-biased ones).
    #[arg(long, value_delimiter = ',')]
    pub coords: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
pub enum BootMode {
    /// Gaussian multipliers on the estimated scores.
    Multiplier,
    /// Scores rebuilt from simulated uniforms.
    Simulated,
}

#[derive(Debug, Args, Serialize)]
pub struct BootArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub method: MethodArgs,
    /// 0-based coordinates in the group.
    #[arg(long, value_delimiter = ',', required = true)]
    pub group: Vec<usize>,
    /// Null values, one per group member (default: zeros).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub beta0: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value = "multiplier")]
    pub mode: BootMode,
    #[arg(long, default_value_t = DEFAULT_BOOTSTRAP)]
    pub b: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Use absolute deviations (multiplier mode only).
    #[arg(long)]
    pub two_sided: bool,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum DncCommand {
    /// Partition the rows into equal blocks; writes `plan.json`.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        m: usize,
    },
    /// De-bias one block; writes `split_LLL.json` and its matrix.
    Work {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        split: usize,
        #[command(flatten)]
        method: MethodArgs,
    },
    /// Average the block estimates found in `--dir`.
    Aggregate {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
}

/// Parses `gaussian[:variance]`, `t:df` or `cauchy[:scale]`.
pub fn parse_noise(spec: &str) -> Result<NoiseModel> {
    let (name, arg) = match spec.split_once(':') {
        Some((a, b)) => (a, Some(b.parse::<f64>().map_err(|e| Error::Config(format!("noise parameter {b:?}: {e}")))?)),
        None => (spec, None),
    };
    let noise = match (name, arg) {
        ("gaussian", v) => NoiseModel::gaussian(v.unwrap_or(1.0)),
        ("t", Some(df)) => NoiseModel::student_t(df),
        ("cauchy", s) => NoiseModel::cauchy(s.unwrap_or(1.0)),
        _ => return Err(Error::Config(format!("unknown noise {spec:?}; use gaussian[:var], t:df or cauchy[:scale]"))),
    };
    noise.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(noise)
}

/// Settings shared by every command.
struct Session {
    config: Option<ExperimentConfig>,
    seed: u64,
    out: PathBuf,
    format: Format,
    hash: String,
}

impl Session {
    fn penalty(&self) -> PenaltyRule {
        self.config.as_ref().map(|c| c.penalty).unwrap_or_default()
    }

    fn solver(&self) -> SolverSettings {
        self.config.as_ref().map(|c| c.solver).unwrap_or_default()
    }

    fn gammas(&self) -> GammaChoice {
        self.config.as_ref().map(|c| c.gammas).unwrap_or_default()
    }

    fn require_config(&self) -> Result<&ExperimentConfig> {
        self.config.as_ref().ok_or_else(|| Error::Config("this command needs --config".into()))
    }

    fn context(&self, method: &MethodArgs) -> Result<FitContext> {
        let density = match (method.density, &method.noise) {
            (DensityChoice::Estimated, _) => DensitySpec::DefaultBandwidth,
            (DensityChoice::Known, Some(spec)) => DensitySpec::Known { noise: parse_noise(spec)? },
            (DensityChoice::Known, None) => match &self.config {
                Some(c) => DensitySpec::Known { noise: c.design.noise.clone() },
                None => return Err(Error::Config("--density known needs --noise or a config".into())),
            },
        };
        Ok(FitContext { rule: self.penalty(), solver: self.solver(), density })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.path(name))?))
    }

    fn write_json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        std::fs::write(self.path(name), text)?;
        Ok(())
    }

    fn table_name(&self, stem: &str) -> String {
        format!("{stem}.{}", self.format.extension())
    }

    fn finish(&self, command: &str, outputs: Vec<String>) -> Result<()> {
        write_manifest(&self.out, &Manifest::new(command, self.hash.clone(), self.seed, outputs))
    }
}

fn method_spec(args: &MethodArgs) -> Result<MethodSpec> {
    MethodEntry { first_stage: args.first_stage, debias: args.debias, k: args.k, taus: args.taus.clone(), truncate: args.truncate }.to_spec()
}

fn load_estimate(path: &Path) -> Result<DebiasedEstimate> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

#[derive(Serialize)]
struct CiRow {
    j: usize,
    estimate: f64,
    lo: f64,
    hi: f64,
    half_width: f64,
    level: f64,
}

#[derive(Serialize)]
struct TestRow {
    j: usize,
    estimate: f64,
    std_error: f64,
    z: f64,
    p_value: f64,
    reject: bool,
}

fn ci_rows(est: &DebiasedEstimate, alpha: f64) -> Result<Vec<CiRow>> {
    Ok(all_cis(est, alpha)?
        .into_iter()
        .map(|ci| CiRow { j: ci.j, estimate: (ci.lo + ci.hi) / 2.0, lo: ci.lo, hi: ci.hi, half_width: ci.half_width, level: ci.level })
        .collect())
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let mut config = cli.config.as_ref().map(ExperimentConfig::load).transpose()?;
    if let Some(seed) = cli.seed {
        config = config.map(|c| c.with_seed(seed));
    }
    let seed = cli.seed.or(config.as_ref().map(|c| c.seed)).unwrap_or(0);
    let out = cli.out.clone().or(config.as_ref().map(|c| c.output_dir.clone())).unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out)?;
    // Hash everything that determines the outputs except the thread count.
    let hash = content_hash(&(&config, seed, &cli.format, &cli.command))?;
    let s = Session { config, seed, out, format: cli.format, hash };
    match &cli.command {
        Command::Simulate { rep } => {
            let cfg = s.require_config()?;
            let (data, _) = cfg.design.sampler()?.draw(*rep);
            data.save_csv(s.path("data.csv"))?;
            s.write_json("truth.json", &cfg.design.beta_star)?;
            s.finish("simulate", vec!["data.csv".into(), "truth.json".into()])
        }
        Command::Fit(a) => {
            let data = Dataset::load(&a.data)?;
            let spec = method_spec(&a.method)?;
            let ctx = s.context(&a.method)?;
            let fit = fit_first_stage(spec.first_stage, &data, &spec.grid, &ctx, &mut NoiseLevel::default())?;
            s.write_json("fit.json", &fit)?;
            s.finish("fit", vec!["fit.json".into()])
        }
        Command::Debias(a) => {
            let data = Dataset::load(&a.data)?;
            let spec = method_spec(&a.method)?;
            let ctx = s.context(&a.method)?;
            let g = s.gammas().resolve(data.n(), data.p())?;
            let m = match &a.coords {
                Some(c) => build_m_rows(&data, c, &g, Variant::VarianceMin, &ctx.solver)?,
                None => build_m(&data, &g, Variant::VarianceMin, &ctx.solver)?,
            };
            let est = run_method(&spec, &m, &data, &ctx, &mut NoiseLevel::default())?;
            s.write_json("estimate.json", &est)?;
            m.save_json(s.path("m.json"))?;
            s.finish("debias", vec!["estimate.json".into(), "m.json".into()])
        }
        Command::Ci(a) => {
            let est = load_estimate(&a.estimate)?;
            let name = s.table_name("ci");
            write_records(&ci_rows(&est, a.alpha)?, s.format, s.create(&name)?)?;
            s.finish("ci", vec![name])
        }
        Command::Test(a) => {
            let est = load_estimate(&a.estimate)?;
            let coords = a.coords.clone().unwrap_or_else(|| est.coords.clone());
            let z_crit = crate::inference::normal_quantile(1.0 - a.alpha / 2.0);
            let rows = coords
                .iter()
                .map(|&j| {
                    let r = est.position(j).ok_or_else(|| Error::domain(format!("coordinate {j} was not de-biased")))?;
                    let se = est.std_error(j).expect("present");
                    let z = est.beta_d[r] / se;
                    Ok(TestRow { j, estimate: est.beta_d[r], std_error: se, z, p_value: 2.0 * normal_cdf(-z.abs()), reject: z.abs() > z_crit })
                })
                .collect::<Result<Vec<_>>>()?;
            let name = s.table_name("tests");
            write_records(&rows, s.format, s.create(&name)?)?;
            s.finish("test", vec![name])
        }
        Command::BootTest(a) => {
            let data = Dataset::load(&a.data)?;
            let mut method = a.method.clone();
            method.debias = DebiasKind::Cq;
            let spec = method_spec(&method)?;
            let ctx = s.context(&method)?;
            let g = s.gammas().resolve(data.n(), data.p())?;
            let m = build_m_rows(&data, &a.group, &g, Variant::L1Min, &ctx.solver)?;
            let est = run_method(&spec, &m, &data, &ctx, &mut NoiseLevel::default())?;
            let beta0 = a.beta0.clone().unwrap_or_else(|| vec![0.0; a.group.len()]);
            let result = match (a.mode, a.two_sided) {
                (BootMode::Multiplier, false) => simultaneous_test(&est, &m, &data, &a.group, &beta0, a.alpha, a.b, s.seed)?,
                (BootMode::Multiplier, true) => simultaneous_test_two_sided(&est, &m, &data, &a.group, &beta0, a.alpha, a.b, s.seed)?,
                (BootMode::Simulated, false) => simulated_psi_test(&est, &m, &data, &spec.grid, &a.group, &beta0, a.alpha, a.b, s.seed)?,
                (BootMode::Simulated, true) => return Err(Error::Config("--two-sided applies to the multiplier mode only".into())),
            };
            s.write_json("boot_test.json", &result)?;
            s.finish("boot-test", vec!["boot_test.json".into()])
        }
        Command::Dnc(DncCommand::Split { data, m }) => {
            let data = Dataset::load(data)?;
            let plan = make_split_plan(data.n(), *m, s.seed)?;
            std::fs::write(s.path("plan.json"), plan.to_json()? + "\n")?;
            s.finish("dnc split", vec!["plan.json".into()])
        }
        Command::Dnc(DncCommand::Work { data, plan, split, method }) => {
            let data = Dataset::load(data)?;
            let plan = SplitPlan::from_json(&std::fs::read_to_string(plan)?)?;
            let block = plan.split(&data, *split)?;
            let gammas = match s.gammas() {
                GammaChoice::Auto(_) => None,
                GammaChoice::Fixed(g) => Some(g),
            };
            let options = DncOptions { method: method_spec(method)?, gammas, ctx: s.context(method)? };
            let (est, m) = work_split(&block, &options).map_err(|e| Error::Split { split: *split, source: Box::new(e) })?;
            save_split(&s.out, *split, &est, &m)?;
            let stem = format!("split_{split:03}");
            s.finish("dnc work", vec![format!("{stem}.json"), format!("{stem}_m.bin")])
        }
        Command::Dnc(DncCommand::Aggregate { dir, alpha }) => {
            let splits = load_splits(dir)?;
            if splits.is_empty() {
                return Err(Error::Config(format!("no split_*.json files in {}", dir.display())));
            }
            let agg = aggregate(splits.into_iter().map(|r| r.estimate).collect())?;
            s.write_json("aggregate.json", &agg)?;
            let rows = agg
                .coords
                .iter()
                .map(|&j| agg.ci(j, *alpha).map(|ci| CiRow { j, estimate: agg.beta_bar_d[agg.position(j).expect("own coordinate")], lo: ci.lo, hi: ci.hi, half_width: ci.half_width, level: ci.level }))
                .collect::<Result<Vec<_>>>()?;
            let name = s.table_name("ci");
            write_records(&rows, s.format, s.create(&name)?)?;
            s.finish("dnc aggregate", vec!["aggregate.json".into(), name])
        }
        Command::Coverage => {
            let study = coverage_study(s.require_config()?)?;
            let (rows, coords) = (s.table_name("coverage"), s.table_name("coordinates"));
            write_coverage(&study.rows, s.format, s.create(&rows)?)?;
            write_records(&study.coordinates, s.format, s.create(&coords)?)?;
            s.finish("coverage", vec![rows, coords])
        }
        Command::Histogram { coords, bins } => {
            let recs = run_histogram(s.require_config()?, coords, *bins)?;
            let name = s.table_name("histogram");
            write_histograms(&recs, s.format, s.create(&name)?)?;
            s.finish("histogram", vec![name])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_specs() {
        assert_eq!(parse_noise("gaussian").unwrap(), NoiseModel::gaussian(1.0));
        assert_eq!(parse_noise("gaussian:4").unwrap(), NoiseModel::gaussian(4.0));
        assert_eq!(parse_noise("t:3").unwrap(), NoiseModel::student_t(3.0));
        assert_eq!(parse_noise("cauchy").unwrap(), NoiseModel::cauchy(1.0));
        for bad in ["t", "laplace", "gaussian:x", "cauchy:-1"] {
            assert_eq!(parse_noise(bad).unwrap_err().exit_code(), 2, "{bad}");
        }
    }

    #[test]
    fn command_line_shapes() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
        let cli = Cli::try_parse_from(["dcqr", "--seed", "4", "boot-test", "--data", "d.csv", "--group", "0,3", "--beta0", "-1,2", "--format", "json"]).unwrap();
        assert_eq!(cli.format, Format::Json);
        match cli.command {
            Command::BootTest(a) => {
                assert_eq!(a.group, vec![0, 3]);
                assert_eq!(a.beta0, Some(vec![-1.0, 2.0]));
                assert_eq!(a.b, DEFAULT_BOOTSTRAP);
            }
            other => panic!("{other:?}"),
        }
        assert!(Cli::try_parse_from(["dcqr", "fit", "--data", "d.csv", "--k", "3", "--taus", "0.5"]).is_err());
    }
}
