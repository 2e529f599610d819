//! Monte-Carlo replication: coverage tables, per-coordinate sweeps and
//! histograms of de-biased coordinates.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::data::{Dataset, QuantileGrid};
use crate::decorrelate::{build_m, build_m_rows, DebiasedEstimate, DecorrelationMatrix, Variant};
use crate::error::{Error, Result};
use crate::first_stage::FirstStageFit;
use crate::inference::normal_quantile;
use crate::pipeline::{debias_fit, fit_first_stage, FirstStage, FitContext, MethodSpec, NoiseLevel};

/// Fraction of replications that must succeed for a row to be reported.
pub const MIN_SUCCESS: f64 = 0.9;

/// Coverage and average CI length for one method, over all coordinates, the
/// true support and its complement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub method: String,
    pub noise: String,
    pub cp_all: f64,
    #[serde(rename = "cp_T")]
    pub cp_t: f64,
    #[serde(rename = "cp_Tc")]
    pub cp_tc: f64,
    pub al_all: f64,
    #[serde(rename = "al_T")]
    pub al_t: f64,
    #[serde(rename = "al_Tc")]
    pub al_tc: f64,
    /// Successful replications.
    pub reps: usize,
    /// Attempted replications.
    pub attempted: usize,
}

impl CoverageRow {
    pub fn success_fraction(&self) -> f64 {
        self.reps as f64 / self.attempted as f64
    }
}

/// Coverage and mean length of one coordinate's interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateCoverage {
    pub method: String,
    pub noise: String,
    pub j: usize,
    pub truth: f64,
    pub cp: f64,
    pub al: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageStudy {
    pub rows: Vec<CoverageRow>,
    pub coordinates: Vec<CoordinateCoverage>,
}

/// Fits shared between methods on one replication.
#[derive(Default)]
struct FitCache {
    fits: Vec<(FirstStage, Option<QuantileGrid>, FirstStageFit)>,
    noise: NoiseLevel,
}

impl FitCache {
    fn fit(&mut self, method: &MethodSpec, data: &Dataset, ctx: &FitContext) -> Result<FirstStageFit> {
        // PLAD and the Lasso ignore the grid.
        let key_grid = match method.first_stage {
            FirstStage::Pcqr | FirstStage::TruncatedPcqr { .. } => Some(method.grid.clone()),
            _ => None,
        };
        if let Some((_, _, f)) = self.fits.iter().find(|(fs, g, _)| *fs == method.first_stage && *g == key_grid) {
            return Ok(f.clone());
        }
        let fit = fit_first_stage(method.first_stage, data, &method.grid, ctx, &mut self.noise)?;
        self.fits.push((method.first_stage, key_grid, fit.clone()));
        Ok(fit)
    }

    fn estimate(&mut self, method: &MethodSpec, m: &DecorrelationMatrix, data: &Dataset, ctx: &FitContext) -> Result<DebiasedEstimate> {
        let fit = self.fit(method, data, ctx)?;
        debias_fit(method, &fit, m, data, ctx, &mut self.noise)
    }
}

/// One replication: a shared matrix for `coords`, then every method.
fn replicate(config: &ExperimentConfig, data: &Dataset, coords: Option<&[usize]>) -> Vec<Result<DebiasedEstimate>> {
    let ctx = config.fit_context();
    let m = config.gammas.resolve(data.n(), data.p()).and_then(|g| match coords {
        None => build_m(data, &g, Variant::VarianceMin, &ctx.solver),
        Some(c) => build_m_rows(data, c, &g, Variant::VarianceMin, &ctx.solver),
    });
    let m = match m {
        Ok(m) => m,
        Err(e) => {
            log::warn!("decorrelation failed: {e}");
            return config.methods.iter().map(|_| Err(Error::Construction(format!("decorrelation failed: {e}")))).collect();
        }
    };
    let mut cache = FitCache::default();
    config
        .methods
        .iter()
        .map(|method| {
            let est = cache.estimate(method, &m, data, &ctx);
            if let Err(e) = &est {
                log::warn!("{method}: {e}");
            }
            est
        })
        .collect()
}

/// Runs every replication (in parallel) and returns per-replication,
/// per-method estimates in replication order.
fn simulate(config: &ExperimentConfig, coords: Option<&[usize]>) -> Result<Vec<Vec<Result<DebiasedEstimate>>>> {
    config.validate()?;
    let sampler = config.design.sampler()?;
    Ok((0..config.reps as u64)
        .into_par_iter()
        .map(|rep| {
            let (data, _) = sampler.draw(rep);
            replicate(config, &data, coords)
        })
        .collect())
}

/// Coverage rows plus the per-coordinate table behind them.
pub fn coverage_study(config: &ExperimentConfig) -> Result<CoverageStudy> {
    let results = simulate(config, None)?;
    let design = &config.design;
    let p = design.p;
    let truth = design.beta_star();
    let support = design.support();
    let z = normal_quantile(1.0 - config.alpha / 2.0);
    let noise = design.noise.label();
    let mut rows = Vec::new();
    let mut coordinates = Vec::new();
    for (k, method) in config.methods.iter().enumerate() {
        let mut hits = vec![0usize; p];
        let mut width = vec![0.0; p];
        let mut ok = 0usize;
        for rep in &results {
            let Ok(est) = &rep[k] else { continue };
            ok += 1;
            for j in 0..p {
                let r = est.position(j).expect("full matrix");
                let half = z * (est.var_diag[r] / est.n as f64).sqrt();
                hits[j] += ((est.beta_d[r] - truth[j]).abs() <= half) as usize;
                width[j] += 2.0 * half;
            }
        }
        let label = method.to_string();
        if (ok as f64) < MIN_SUCCESS * config.reps as f64 {
            log::warn!("{label}: only {ok} of {} replications succeeded; row omitted", config.reps);
            continue;
        }
        let reps = ok as f64;
        let hits: Vec<f64> = hits.into_iter().map(|h| h as f64).collect();
        let avg = |v: &[f64], idx: &[usize]| if idx.is_empty() { f64::NAN } else { idx.iter().map(|&j| v[j]).sum::<f64>() / (idx.len() as f64 * reps) };
        let all: Vec<usize> = (0..p).collect();
        let off: Vec<usize> = all.iter().copied().filter(|j| !support.contains(j)).collect();
        rows.push(CoverageRow {
            method: label.clone(),
            noise: noise.clone(),
            cp_all: avg(&hits, &all),
            cp_t: avg(&hits, &support),
            cp_tc: avg(&hits, &off),
            al_all: avg(&width, &all),
            al_t: avg(&width, &support),
            al_tc: avg(&width, &off),
            reps: ok,
            attempted: config.reps,
        });
        coordinates.extend((0..p).map(|j| CoordinateCoverage {
            method: label.clone(),
            noise: noise.clone(),
            j,
            truth: truth[j],
            cp: hits[j] / reps,
            al: width[j] / reps,
            reps: ok,
        }));
    }
    Ok(CoverageStudy { rows, coordinates })
}

/// One [`CoverageRow`] per method that succeeded on enough replications.
pub fn run_coverage(config: &ExperimentConfig) -> Result<Vec<CoverageRow>> {
    Ok(coverage_study(config)?.rows)
}

/// Replication values of one de-biased coordinate and their binned counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRecord {
    pub method: String,
    pub noise: String,
    pub j: usize,
    pub truth: f64,
    pub values: Vec<f64>,
    /// `bins + 1` increasing edges; the last bin is closed on the right.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub mean: f64,
    /// Standard error of `mean`; zero with a single value.
    pub std_error: f64,
}

/// Equal-width bins over the sample range. A constant sample gets a unit-wide
/// range around its value, so exactly one bin is nonempty.
pub fn bin_values(values: &[f64], bins: usize) -> Result<(Vec<f64>, Vec<usize>)> {
    if bins == 0 {
        return Err(Error::domain("bins must be positive"));
    }
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("need finite values to bin"));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
    let step = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|b| if b == bins { hi } else { lo + b as f64 * step }).collect();
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = (((v - lo) / step).floor() as usize).min(bins - 1);
        counts[b] += 1;
    }
    Ok((edges, counts))
}

/// De-biased values of `coords` over the replications, per method. Only the
/// matrix rows for `coords` are computed.
pub fn run_histogram(config: &ExperimentConfig, coords: &[usize], bins: usize) -> Result<Vec<HistogramRecord>> {
    let p = config.design.p;
    if coords.is_empty() || coords.iter().any(|&j| j >= p) {
        return Err(Error::domain(format!("coordinates must be nonempty and below p = {p}")));
    }
    if bins == 0 {
        return Err(Error::domain("bins must be positive"));
    }
    let results = simulate(config, Some(coords))?;
    let truth = config.design.beta_star();
    let noise = config.design.noise.label();
    let mut out = Vec::new();
    for (k, method) in config.methods.iter().enumerate() {
        let ok: Vec<&DebiasedEstimate> = results.iter().filter_map(|rep| rep[k].as_ref().ok()).collect();
        if (ok.len() as f64) < MIN_SUCCESS * config.reps as f64 {
            log::warn!("{method}: only {} of {} replications succeeded; histogram omitted", ok.len(), config.reps);
            continue;
        }
        for &j in coords {
            let values: Vec<f64> = ok.iter().map(|e| e.beta_d[e.position(j).expect("requested row")]).collect();
            let (edges, counts) = bin_values(&values, bins)?;
            let v = DVector::from_column_slice(&values);
            let mean = v.mean();
            // Population variance over n − 1 is the squared standard error of the mean.
            let std_error = if values.len() > 1 { (v.variance() / (values.len() - 1) as f64).sqrt() } else { 0.0 };
            out.push(HistogramRecord { method: method.to_string(), noise: noise.clone(), j, truth: truth[j], values, edges, counts, mean, std_error });
        }
    }
    Ok(out)
}
