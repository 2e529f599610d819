//! Experiment configuration read from TOML.
//!
//! ```toml
//! seed = 20240601
//! reps = 100
//! alpha = 0.05
//! density = "known"          # or "estimated"
//! gammas = "auto"            # or an inline table of GammaParams fields
//! output_dir = "out/table1"
//!
//! [design]
//! n = 200
//! p = 250
//! s = 5
//! signal = 1.0
//! noise = { kind = "gaussian", variance = 1.0 }
//! covariance = { kind = "banded_circulant", value = 0.1, width = 5 }
//!
//! [[methods]]
//! first_stage = "plad"       # pcqr | plad | lasso
//! debias = "cq"              # cq | square
//! k = 9                      # equispaced levels, or `taus = [0.5]`
//! # truncate = 5             # keep the 5 largest first-stage entries
//!
//! [penalty]                  # optional, any subset of PenaltyRule fields
//! [solver]                   # optional, any subset of SolverSettings fields
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{Covariance, NoiseModel, QuantileGrid, SimulationDesign};
use crate::decorrelate::{default_gammas, GammaParams};
use crate::error::{Error, Result};
use crate::first_stage::PenaltyRule;
use crate::nuisance::DensitySpec;
use crate::optim::SolverSettings;
use crate::pipeline::{DebiasKind, FirstStage, FitContext, MethodSpec};

/// Radii for the decorrelation program.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GammaChoice {
    /// The string `"auto"`: [`default_gammas`] at the sample size.
    Auto(AutoKeyword),
    Fixed(GammaParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoKeyword {
    Auto,
}

impl Default for GammaChoice {
    fn default() -> Self {
        GammaChoice::Auto(AutoKeyword::Auto)
    }
}

impl GammaChoice {
    pub fn resolve(&self, n: usize, p: usize) -> Result<GammaParams> {
        match self {
            GammaChoice::Auto(_) => default_gammas(n, p),
            GammaChoice::Fixed(g) => {
                g.validate()?;
                Ok(*g)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DensityChoice {
    /// Evaluate the simulated noise density.
    #[default]
    Known,
    /// Difference-quotient estimate at the default bandwidth.
    Estimated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum FirstStageName {
    Pcqr,
    Plad,
    Lasso,
}

/// One `[[methods]]` entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodEntry {
    pub first_stage: FirstStageName,
    pub debias: DebiasKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taus: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncate: Option<usize>,
}

impl MethodEntry {
    pub fn to_spec(&self) -> Result<MethodSpec> {
        let grid = match (&self.taus, self.k) {
            (Some(_), Some(_)) => return Err(Error::Config("give either k or taus, not both".into())),
            (Some(t), None) => QuantileGrid::new(t.clone())?,
            (None, k) => QuantileGrid::equispaced(k.unwrap_or(9))?,
        };
        let first_stage = match (self.first_stage, self.truncate) {
            (FirstStageName::Pcqr, None) => FirstStage::Pcqr,
            (FirstStageName::Plad, None) => FirstStage::Plad,
            (FirstStageName::Lasso, None) => FirstStage::Lasso,
            (FirstStageName::Pcqr, Some(s)) => FirstStage::TruncatedPcqr { s },
            (FirstStageName::Plad, Some(s)) => FirstStage::TruncatedPlad { s },
            (FirstStageName::Lasso, Some(_)) => return Err(Error::Config("truncation applies to quantile first stages only".into())),
        };
        Ok(MethodSpec::new(first_stage, self.debias, grid))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignEntry {
    pub n: usize,
    pub p: usize,
    pub s: usize,
    #[serde(default = "one")]
    pub signal: f64,
    pub noise: NoiseModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Covariance>,
}

fn one() -> f64 {
    1.0
}

/// The file layout; see the module docs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: u64,
    pub reps: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub density: DensityChoice,
    #[serde(default)]
    pub gammas: GammaChoice,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    pub design: DesignEntry,
    pub methods: Vec<MethodEntry>,
    #[serde(default)]
    pub penalty: PenaltyRule,
    #[serde(default)]
    pub solver: SolverSettings,
}

fn default_alpha() -> f64 {
    0.05
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// A validated experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub design: SimulationDesign,
    pub methods: Vec<MethodSpec>,
    pub reps: usize,
    pub alpha: f64,
    pub gammas: GammaChoice,
    pub density: DensityChoice,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub penalty: PenaltyRule,
    pub solver: SolverSettings,
}

impl ExperimentConfig {
    /// Benchmark setup: `n = 200`, `p = 250`, `s = 5`, unit signal, `K = 9`,
    /// `α = 0.05`, automatic radii, known density, and the six method rows.
    pub fn benchmark(noise: NoiseModel, reps: usize, seed: u64) -> Result<Self> {
        let design = SimulationDesign::banded(200, 250, 5, noise, seed)?;
        let cfg = ExperimentConfig {
            design,
            methods: MethodSpec::table(&QuantileGrid::equispaced(9)?),
            reps,
            alpha: 0.05,
            gammas: GammaChoice::default(),
            density: DensityChoice::Known,
            seed,
            output_dir: default_output(),
            penalty: PenaltyRule::default(),
            solver: SolverSettings::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file_struct(file: ConfigFile) -> Result<Self> {
        let d = &file.design;
        let mut design = SimulationDesign::banded(d.n, d.p, d.s, d.noise.clone(), file.seed)?;
        design.beta_star.iter_mut().take(d.s).for_each(|b| *b = d.signal);
        if let Some(c) = &d.covariance {
            design.covariance = c.clone();
        }
        let methods = file.methods.iter().map(MethodEntry::to_spec).collect::<Result<Vec<_>>>()?;
        let cfg = ExperimentConfig {
            design,
            methods,
            reps: file.reps,
            alpha: file.alpha,
            gammas: file.gammas,
            density: file.density,
            seed: file.seed,
            output_dir: file.output_dir,
            penalty: file.penalty,
            solver: file.solver,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_file_struct(toml::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Config("reps must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha = {} is outside (0, 1)", self.alpha)));
        }
        self.design.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.solver.validate()?;
        self.gammas.resolve(self.design.n, self.design.p)?;
        Ok(())
    }

    /// Same experiment with another seed, for the `--seed` override.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.design.seed = seed;
        self
    }

    pub fn fit_context(&self) -> FitContext {
        let density = match self.density {
            DensityChoice::Known => DensitySpec::Known { noise: self.design.noise.clone() },
            DensityChoice::Estimated => DensitySpec::DefaultBandwidth,
        };
        FitContext { rule: self.penalty, solver: self.solver, density }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        super::emit::content_hash(self)
    }
}
