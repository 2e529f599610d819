use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, NoiseModel};
use crate::error::{Error, Result};
use crate::rng::{substream, Purpose};

/// Population covariance of the design rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Covariance {
    /// Unit diagonal; `value` whenever `1 ≤ |j−k| ≤ width` or `|j−k| ≥ p − width`.
    BandedCirculant { value: f64, width: usize },
    Identity,
    /// Row-major `p × p` entries.
    Explicit { p: usize, entries: Vec<f64> },
}

impl Covariance {
    pub fn matrix(&self, p: usize) -> Result<DMatrix<f64>> {
        match self {
            Covariance::Identity => Ok(DMatrix::identity(p, p)),
            Covariance::BandedCirculant { value, width } => Ok(DMatrix::from_fn(p, p, |j, k| {
                let d = j.abs_diff(k);
                if d == 0 {
                    1.0
                } else if d <= *width || d + width >= p {
                    *value
                } else {
                    0.0
                }
            })),
            Covariance::Explicit { p: q, entries } => {
                if *q != p || entries.len() != p * p {
                    return Err(Error::dim(format!("explicit covariance is not {p} x {p}")));
                }
                Ok(DMatrix::from_row_slice(p, p, entries))
            }
        }
    }
}

/// Everything needed to simulate one replication of the linear model
/// `y = Xβ* + ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationDesign {
    pub n: usize,
    pub p: usize,
    pub s: usize,
    pub beta_star: Vec<f64>,
    pub covariance: Covariance,
    pub noise: NoiseModel,
    pub seed: u64,
}

impl SimulationDesign {
    /// The benchmark design: banded circulant covariance (0.1 within 5 of the
    /// diagonal, wrapping around), and `β*_j = 1` on the first `s` coordinates.
    pub fn banded(n: usize, p: usize, s: usize, noise: NoiseModel, seed: u64) -> Result<Self> {
        let mut beta_star = vec![0.0; p];
        beta_star.iter_mut().take(s).for_each(|b| *b = 1.0);
        let d = SimulationDesign {
            n,
            p,
            s,
            beta_star,
            covariance: Covariance::BandedCirculant { value: 0.1, width: 5 },
            noise,
            seed,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 || self.s == 0 {
            return Err(Error::domain("n, p and s must be positive"));
        }
        if self.beta_star.len() != self.p {
            return Err(Error::dim("beta_star must have length p"));
        }
        let nnz = self.beta_star.iter().filter(|b| **b != 0.0).count();
        if nnz != self.s {
            return Err(Error::domain(format!("beta_star has {nnz} nonzeros, expected s = {}", self.s)));
        }
        self.noise.validate()
    }

    pub fn beta_star(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.beta_star)
    }

    /// Indices of the true support.
    pub fn support(&self) -> Vec<usize> {
        (0..self.p).filter(|&j| self.beta_star[j] != 0.0).collect()
    }

    pub fn sampler(&self) -> Result<DesignSampler> {
        DesignSampler::new(self.clone())
    }
}

/// A design with its covariance square root cached.
#[derive(Debug, Clone)]
pub struct DesignSampler {
    design: SimulationDesign,
    sigma: DMatrix<f64>,
    chol_l: DMatrix<f64>,
}

impl DesignSampler {
    pub fn new(design: SimulationDesign) -> Result<Self> {
        design.validate()?;
        let sigma = design.covariance.matrix(design.p)?;
        if (&sigma - sigma.transpose()).amax() > 1e-12 {
            return Err(Error::Construction("covariance is not symmetric".into()));
        }
        let chol = sigma
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Construction("covariance is not positive definite".into()))?;
        let chol_l = chol.l();
        Ok(DesignSampler { design, sigma, chol_l })
    }

    pub fn design(&self) -> &SimulationDesign {
        &self.design
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Replication `rep`: rows i.i.d. N(0, Σ), noise i.i.d. from the noise law.
    /// Returns the dataset and the true noise vector.
    pub fn draw(&self, rep: u64) -> (Dataset, DVector<f64>) {
        let (n, p) = (self.design.n, self.design.p);
        let mut rng = substream(self.design.seed, rep, Purpose::Design);
        // Draw row by row so the matrix does not depend on storage order.
        let mut z = DMatrix::<f64>::zeros(n, p);
        for i in 0..n {
            for j in 0..p {
                z[(i, j)] = StandardNormal.sample(&mut rng);
            }
        }
        let x = z * self.chol_l.transpose();
        let mut nrng = substream(self.design.seed, rep, Purpose::Noise);
        let eps = DVector::from_iterator(n, (0..n).map(|_| self.design.noise.sample(&mut nrng)));
        let y = &x * self.design.beta_star() + &eps;
        let data = Dataset::new(x, y).expect("simulated data are finite and well shaped");
        (data, eps)
    }
}

/// Replication 0 of `design`.
pub fn generate_dataset(design: &SimulationDesign) -> Result<(Dataset, DVector<f64>)> {
    Ok(design.sampler()?.draw(0))
}
