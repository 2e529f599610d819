//! Divide-and-conquer de-biasing: split the sample into equal blocks, de-bias
//! each block on its own, and average.
//!
//! Blocks can run in one process ([`dnc_debias`]) or as separate jobs that
//! write [`SplitEstimate`] files for a later [`aggregate`] step.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::decorrelate::{build_m, default_gammas, Correction, DebiasedEstimate, DecorrelationMatrix, GammaParams, Variant};
use crate::error::{Error, Result};
use crate::inference::{normal_quantile, ConfidenceInterval};
use crate::pipeline::{run_method, DebiasKind, FirstStage, FitContext, MethodSpec, NoiseLevel};
use crate::rng::{substream, Purpose};

/// Smallest block the planner accepts.
pub const MIN_BLOCK: usize = 10;

/// A partition of a prefix of a random permutation of `0..n_total` into `m`
/// equal blocks. Indices inside a block are sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub n_total: usize,
    pub m: usize,
    pub block_size: usize,
    pub blocks: Vec<Vec<usize>>,
    pub discarded: Vec<usize>,
}

/// Random plan: permute, deal the first `m·⌊N/m⌋` indices round-robin and
/// drop the rest with a warning.
pub fn make_split_plan(n_total: usize, m: usize, seed: u64) -> Result<SplitPlan> {
    if m == 0 {
        return Err(Error::domain("m must be positive"));
    }
    if n_total < MIN_BLOCK * m {
        return Err(Error::domain(format!("N = {n_total} is below {MIN_BLOCK}·m = {}", MIN_BLOCK * m)));
    }
    let mut order: Vec<usize> = (0..n_total).collect();
    order.shuffle(&mut substream(seed, 0, Purpose::Split));
    let block_size = n_total / m;
    let used = block_size * m;
    let mut blocks = vec![Vec::with_capacity(block_size); m];
    for (pos, &i) in order[..used].iter().enumerate() {
        blocks[pos % m].push(i);
    }
    blocks.iter_mut().for_each(|b| b.sort_unstable());
    let mut discarded = order[used..].to_vec();
    discarded.sort_unstable();
    if !discarded.is_empty() {
        log::warn!("{} of {n_total} observations discarded to make {m} equal blocks", discarded.len());
    }
    Ok(SplitPlan { n_total, m, block_size, blocks, discarded })
}

impl SplitPlan {
    /// Plan from explicit blocks, which must be disjoint, nonempty and of equal size.
    pub fn from_blocks(n_total: usize, blocks: Vec<Vec<usize>>) -> Result<Self> {
        let m = blocks.len();
        if m == 0 || blocks[0].is_empty() {
            return Err(Error::domain("need at least one nonempty block"));
        }
        let block_size = blocks[0].len();
        if blocks.iter().any(|b| b.len() != block_size) {
            return Err(Error::domain("blocks must have equal size"));
        }
        let mut seen = vec![false; n_total];
        for &i in blocks.iter().flatten() {
            if i >= n_total || std::mem::replace(&mut seen[i], true) {
                return Err(Error::domain(format!("index {i} is out of range or repeated")));
            }
        }
        let discarded = (0..n_total).filter(|&i| !seen[i]).collect();
        let blocks = blocks
            .into_iter()
            .map(|mut b| {
                b.sort_unstable();
                b
            })
            .collect();
        Ok(SplitPlan { n_total, m, block_size, blocks, discarded })
    }

    pub fn n_used(&self) -> usize {
        self.block_size * self.m
    }

    pub fn split(&self, data: &Dataset, l: usize) -> Result<Dataset> {
        if data.n() != self.n_total {
            return Err(Error::dim(format!("plan covers {} rows, data has {}", self.n_total, data.n())));
        }
        let block = self.blocks.get(l).ok_or_else(|| Error::domain(format!("split {l} outside 0..{}", self.m)))?;
        data.select_rows(block)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let plan: SplitPlan = serde_json::from_str(s)?;
        let check = SplitPlan::from_blocks(plan.n_total, plan.blocks.clone())?;
        if check != plan {
            return Err(Error::Format("split plan fields are inconsistent".into()));
        }
        Ok(plan)
    }
}

/// Method and radii applied on every block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DncOptions {
    pub method: MethodSpec,
    /// `None` uses [`default_gammas`] at the block size.
    pub gammas: Option<GammaParams>,
    pub ctx: FitContext,
}

impl DncOptions {
    /// Truncated PCQR keeping `s` entries, composite correction on `grid`.
    pub fn truncated_pcqr(s: usize, grid: crate::data::QuantileGrid, ctx: FitContext) -> Self {
        DncOptions { method: MethodSpec::new(FirstStage::TruncatedPcqr { s }, DebiasKind::Cq, grid), gammas: None, ctx }
    }
}

/// One block's output, written by a worker and read by the aggregator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEstimate {
    pub split: usize,
    pub estimate: DebiasedEstimate,
}

/// De-biases one block.
pub fn work_split(block: &Dataset, options: &DncOptions) -> Result<(DebiasedEstimate, DecorrelationMatrix)> {
    if options.method.debias != DebiasKind::Cq {
        return Err(Error::domain("blocks must use the composite-quantile correction"));
    }
    let gammas = match options.gammas {
        Some(g) => g,
        None => default_gammas(block.n(), block.p())?,
    };
    let m = build_m(block, &gammas, Variant::VarianceMin, &options.ctx.solver)?;
    let est = run_method(&options.method, &m, block, &options.ctx, &mut NoiseLevel::default())?;
    Ok((est, m))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedEstimate {
    pub coords: Vec<usize>,
    /// Mean of the per-block de-biased estimates.
    pub beta_bar_d: DVector<f64>,
    /// `σ_K²·θ̄⁻²·m⁻¹Σ_ℓ μ̂_jᵀΣ̂μ̂_j` over blocks.
    pub agg_var_diag: DVector<f64>,
    pub theta_bar: f64,
    pub sigma_k: f64,
    pub m: usize,
    pub block_size: usize,
    pub per_split: Vec<DebiasedEstimate>,
}

/// Sum that does not depend on the order of `values`.
fn canonical_mean(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

/// Averages per-block estimates. The result does not depend on their order.
pub fn aggregate(per_split: Vec<DebiasedEstimate>) -> Result<AggregatedEstimate> {
    let first = per_split.first().ok_or_else(|| Error::domain("nothing to aggregate"))?;
    let coords = first.coords.clone();
    let block_size = first.n;
    let sigma_k = first.scale * first.theta_hat;
    for (l, est) in per_split.iter().enumerate() {
        if est.correction != Correction::CompositeQuantile {
            return Err(Error::Split { split: l, source: Box::new(Error::domain("not a composite-quantile estimate")) });
        }
        if est.coords != coords || est.n != block_size {
            return Err(Error::Split { split: l, source: Box::new(Error::dim("coordinates or block size differ")) });
        }
        if ((est.scale * est.theta_hat) - sigma_k).abs() > 1e-12 * sigma_k {
            return Err(Error::Split { split: l, source: Box::new(Error::domain("blocks used different quantile grids")) });
        }
    }
    let m = per_split.len();
    let q = coords.len();
    let beta_bar_d = DVector::from_fn(q, |r, _| canonical_mean(per_split.iter().map(|e| e.beta_d[r]).collect()));
    let theta_bar = canonical_mean(per_split.iter().map(|e| e.theta_hat).collect());
    // Equal up to rounding across blocks; averaged so the order cannot matter.
    let sigma_k = canonical_mean(per_split.iter().map(|e| e.scale * e.theta_hat).collect());
    let quad = DVector::from_fn(q, |r, _| canonical_mean(per_split.iter().map(|e| e.var_diag[r] / (e.scale * e.scale)).collect()));
    let agg_var_diag = quad * (sigma_k * sigma_k / (theta_bar * theta_bar));
    Ok(AggregatedEstimate { coords, beta_bar_d, agg_var_diag, theta_bar, sigma_k, m, block_size, per_split })
}

/// Runs every block in parallel and aggregates.
pub fn dnc_debias(data: &Dataset, plan: &SplitPlan, options: &DncOptions) -> Result<AggregatedEstimate> {
    let results: Vec<Result<DebiasedEstimate>> = (0..plan.m)
        .into_par_iter()
        .map(|l| {
            let block = plan.split(data, l)?;
            work_split(&block, options).map(|(est, _)| est).map_err(|e| Error::Split { split: l, source: Box::new(e) })
        })
        .collect();
    aggregate(results.into_iter().collect::<Result<Vec<_>>>()?)
}

impl AggregatedEstimate {
    pub fn n_used(&self) -> usize {
        self.m * self.block_size
    }

    pub fn position(&self, j: usize) -> Option<usize> {
        self.coords.iter().position(|&k| k == j)
    }

    /// `√(agg_var_j / N)`.
    pub fn std_error(&self, j: usize) -> Option<f64> {
        self.position(j).map(|r| (self.agg_var_diag[r] / self.n_used() as f64).sqrt())
    }

    pub fn ci(&self, j: usize, alpha: f64) -> Result<ConfidenceInterval> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::domain("alpha must lie in (0, 1)"));
        }
        let r = self.position(j).ok_or_else(|| Error::domain(format!("coordinate {j} was not de-biased")))?;
        let half_width = normal_quantile(1.0 - alpha / 2.0) * self.std_error(j).expect("present");
        let c = self.beta_bar_d[r];
        Ok(ConfidenceInterval { j, lo: c - half_width, hi: c + half_width, level: 1.0 - alpha, half_width })
    }
}

/// Rejects `β*_j = 0` when `|β̄^d_j| > z_{1−α/2}·√(agg_var_j / N)`.
pub fn dnc_test(agg: &AggregatedEstimate, j: usize, alpha: f64) -> Result<bool> {
    let ci = agg.ci(j, alpha)?;
    Ok(agg.beta_bar_d[agg.position(j).expect("checked")].abs() > ci.half_width)
}

/// `dir/split_LLL.json`.
pub fn split_path(dir: impl AsRef<Path>, l: usize) -> PathBuf {
    dir.as_ref().join(format!("split_{l:03}.json"))
}

/// Writes the block estimate as JSON and its decorrelation matrix next to it
/// in the binary matrix format.
pub fn save_split(dir: impl AsRef<Path>, l: usize, est: &DebiasedEstimate, m: &DecorrelationMatrix) -> Result<()> {
    let record = SplitEstimate { split: l, estimate: est.clone() };
    std::fs::write(split_path(&dir, l), serde_json::to_string(&record)?)?;
    m.save_binary(dir.as_ref().join(format!("split_{l:03}_m.bin")))
}

/// Reads every `split_*.json` in `dir`, ordered by split index.
pub fn load_splits(dir: impl AsRef<Path>) -> Result<Vec<SplitEstimate>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("");
        if name.starts_with("split_") && name.ends_with(".json") {
            let rec: SplitEstimate = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
            out.push(rec);
        }
    }
    out.sort_by_key(|r| r.split);
    if out.windows(2).any(|w| w[0].split == w[1].split) {
        return Err(Error::Format("duplicate split index".into()));
    }
    Ok(out)
}
