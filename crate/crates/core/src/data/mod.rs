//! Data model: datasets, quantile grids, the check loss, noise laws and the
//! synthetic design used by the simulation harness.

pub(crate) mod check;
mod design;
pub mod io;
mod noise;

pub use check::{check_loss, check_objective, empirical_quantile, empirical_quantiles};
pub use design::{generate_dataset, Covariance, DesignSampler, SimulationDesign};
pub use noise::{NoiseModel, TabulatedNoise};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Design matrix (rows are observations) and response.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::dim("dataset needs n >= 1 and p >= 1"));
        }
        if x.nrows() != y.len() {
            return Err(Error::dim(format!(
                "X has {} rows but y has length {}",
                x.nrows(),
                y.len()
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::domain("dataset entries must be finite"));
        }
        Ok(Dataset { x, y })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    /// Sample covariance `XᵀX / n`, without centering.
    pub fn gram(&self) -> DMatrix<f64> {
        let mut g = self.x.tr_mul(&self.x);
        g /= self.n() as f64;
        g
    }

    /// Rows `idx` (in the given order) as a new dataset.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Dataset> {
        if idx.is_empty() {
            return Err(Error::dim("row selection is empty"));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.n()) {
            return Err(Error::dim(format!("row {bad} out of range for n = {}", self.n())));
        }
        let x = self.x.select_rows(idx.iter());
        let y = DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.y[i]));
        Ok(Dataset { x, y })
    }

    /// `y − Xβ`.
    pub fn residuals(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.y - &self.x * beta
    }
}

/// Strictly increasing quantile levels in (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct QuantileGrid {
    taus: Vec<f64>,
}

impl QuantileGrid {
    pub fn new(taus: Vec<f64>) -> Result<Self> {
        if taus.is_empty() {
            return Err(Error::domain("quantile grid must be nonempty"));
        }
        if taus.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return Err(Error::domain("quantile levels must lie in (0, 1)"));
        }
        if taus.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain("quantile levels must be strictly increasing"));
        }
        Ok(QuantileGrid { taus })
    }

    /// `k/(K+1)` for `k = 1..=K`.
    pub fn equispaced(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::domain("K must be positive"));
        }
        Self::new((1..=k).map(|i| i as f64 / (k + 1) as f64).collect())
    }

    pub fn median() -> Self {
        QuantileGrid { taus: vec![0.5] }
    }

    pub fn single(tau: f64) -> Result<Self> {
        Self::new(vec![tau])
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }
}

impl TryFrom<Vec<f64>> for QuantileGrid {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        QuantileGrid::new(v)
    }
}

impl From<QuantileGrid> for Vec<f64> {
    fn from(g: QuantileGrid) -> Self {
        g.taus
    }
}
