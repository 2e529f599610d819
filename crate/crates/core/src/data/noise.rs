use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Cauchy, Continuous, ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

/// Law of the regression noise ε.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    Gaussian { variance: f64 },
    StudentT { df: f64 },
    Cauchy { scale: f64 },
    Tabulated(TabulatedNoise),
}

/// Piecewise-linear quantile function given by knots `(probs[i], quantiles[i])`.
///
/// The density on a segment is the reciprocal slope of the quantile table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedNoise {
    probs: Vec<f64>,
    quantiles: Vec<f64>,
}

impl TabulatedNoise {
    pub fn new(probs: Vec<f64>, quantiles: Vec<f64>) -> Result<Self> {
        if probs.len() != quantiles.len() || probs.len() < 2 {
            return Err(Error::domain("tabulated noise needs at least two matching knots"));
        }
        if probs.iter().any(|&p| !(p > 0.0 && p < 1.0)) || probs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain("tabulated probabilities must increase strictly within (0, 1)"));
        }
        if quantiles.iter().any(|q| !q.is_finite()) || quantiles.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::domain("tabulated quantile function must be nondecreasing"));
        }
        Ok(TabulatedNoise { probs, quantiles })
    }

    fn quantile(&self, tau: f64) -> f64 {
        let (p, q) = (&self.probs, &self.quantiles);
        if tau <= p[0] {
            return q[0];
        }
        if tau >= p[p.len() - 1] {
            return q[q.len() - 1];
        }
        let i = p.partition_point(|&v| v <= tau) - 1;
        let w = (tau - p[i]) / (p[i + 1] - p[i]);
        q[i] + w * (q[i + 1] - q[i])
    }

    fn density(&self, x: f64) -> f64 {
        let (p, q) = (&self.probs, &self.quantiles);
        for i in 0..q.len() - 1 {
            let dq = q[i + 1] - q[i];
            if dq > 0.0 && x >= q[i] && x <= q[i + 1] {
                return (p[i + 1] - p[i]) / dq;
            }
        }
        0.0
    }

    /// Second moment minus squared mean of the law whose quantile function is
    /// the table, held constant beyond the outer knots. Exact for piecewise
    /// linear quantile functions.
    fn variance(&self) -> f64 {
        let mut pts: Vec<(f64, f64)> = vec![(0.0, self.quantiles[0])];
        pts.extend(self.probs.iter().copied().zip(self.quantiles.iter().copied()));
        pts.push((1.0, self.quantiles[self.quantiles.len() - 1]));
        let (mut m1, mut m2) = (0.0, 0.0);
        for w in pts.windows(2) {
            let ((u0, a), (u1, b)) = (w[0], w[1]);
            let du = u1 - u0;
            m1 += du * (a + b) / 2.0;
            m2 += du * (a * a + a * b + b * b) / 3.0;
        }
        m2 - m1 * m1
    }
}

impl NoiseModel {
    pub fn gaussian(variance: f64) -> Self {
        NoiseModel::Gaussian { variance }
    }

    pub fn student_t(df: f64) -> Self {
        NoiseModel::StudentT { df }
    }

    pub fn cauchy(scale: f64) -> Self {
        NoiseModel::Cauchy { scale }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            NoiseModel::Gaussian { variance } => *variance > 0.0 && variance.is_finite(),
            NoiseModel::StudentT { df } => *df > 0.0 && df.is_finite(),
            NoiseModel::Cauchy { scale } => *scale > 0.0 && scale.is_finite(),
            NoiseModel::Tabulated(_) => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::domain(format!("invalid noise parameters: {self:?}")))
        }
    }

    /// Short label used in result tables.
    pub fn label(&self) -> String {
        match self {
            NoiseModel::Gaussian { .. } => "gaussian".into(),
            NoiseModel::StudentT { df } => format!("t{df}"),
            NoiseModel::Cauchy { .. } => "cauchy".into(),
            NoiseModel::Tabulated(_) => "tabulated".into(),
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        match self {
            NoiseModel::Gaussian { variance } => normal(variance.sqrt()).pdf(x),
            NoiseModel::StudentT { df } => student(*df).pdf(x),
            NoiseModel::Cauchy { scale } => cauchy(*scale).pdf(x),
            NoiseModel::Tabulated(t) => t.density(x),
        }
    }

    pub fn quantile(&self, tau: f64) -> Result<f64> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::domain(format!("quantile level {tau} outside (0, 1)")));
        }
        Ok(match self {
            NoiseModel::Gaussian { variance } => normal(variance.sqrt()).inverse_cdf(tau),
            NoiseModel::StudentT { df } => student(*df).inverse_cdf(tau),
            NoiseModel::Cauchy { scale } => cauchy(*scale).inverse_cdf(tau),
            NoiseModel::Tabulated(t) => t.quantile(tau),
        })
    }

    /// Variance of ε, or `None` when it is infinite or undefined.
    pub fn variance(&self) -> Option<f64> {
        match self {
            NoiseModel::Gaussian { variance } => Some(*variance),
            NoiseModel::StudentT { df } if *df > 2.0 => Some(df / (df - 2.0)),
            NoiseModel::StudentT { .. } | NoiseModel::Cauchy { .. } => None,
            NoiseModel::Tabulated(t) => Some(t.variance()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            NoiseModel::Gaussian { variance } => {
                rand_distr::Normal::new(0.0, variance.sqrt()).expect("validated").sample(rng)
            }
            NoiseModel::StudentT { df } => rand_distr::StudentT::new(*df).expect("validated").sample(rng),
            NoiseModel::Cauchy { scale } => rand_distr::Cauchy::new(0.0, *scale).expect("validated").sample(rng),
            NoiseModel::Tabulated(t) => {
                let u: f64 = rng.random();
                t.quantile(u)
            }
        }
    }
}

fn normal(sd: f64) -> Normal {
    Normal::new(0.0, sd).expect("positive standard deviation")
}

fn student(df: f64) -> StudentsT {
    StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom")
}

fn cauchy(scale: f64) -> Cauchy {
    Cauchy::new(0.0, scale).expect("positive scale")
}
