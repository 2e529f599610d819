/// A closed proper convex function with a cheap proximal map.
pub trait Prox: Sync {
    /// `out = argmin_z h(z) + ‖z − v‖² / (2·step)`.
    fn prox(&self, v: &[f64], step: f64, out: &mut [f64]);

    /// `h(z)`; indicators return `+∞` outside their set.
    fn value(&self, z: &[f64]) -> f64;
}

/// Proximal map of `w·φ_τ` at `v`.
#[inline]
pub fn prox_check(tau: f64, w: f64, v: f64) -> f64 {
    if v > tau * w {
        v - tau * w
    } else if v < -(1.0 - tau) * w {
        v + (1.0 - tau) * w
    } else {
        0.0
    }
}

#[inline]
pub fn soft_threshold_scalar(lambda: f64, v: f64) -> f64 {
    if v > lambda {
        v - lambda
    } else if v < -lambda {
        v + lambda
    } else {
        0.0
    }
}

/// Componentwise `sign(v)·max(|v| − λ, 0)`.
pub fn soft_threshold(lambda: f64, v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| soft_threshold_scalar(lambda, x)).collect()
}

/// Euclidean projection onto the ∞-ball of the given radius.
pub fn project_linf(radius: f64, v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x.clamp(-radius, radius)).collect()
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroFn;

impl Prox for ZeroFn {
    fn prox(&self, v: &[f64], _step: f64, out: &mut [f64]) {
        out.copy_from_slice(v);
    }
    fn value(&self, _z: &[f64]) -> f64 {
        0.0
    }
}

/// `Σᵢ wᵢ|zᵢ|`. A zero weight leaves the coordinate unpenalized.
#[derive(Debug, Clone)]
pub struct L1Norm {
    weights: Vec<f64>,
}

impl L1Norm {
    pub fn uniform(lambda: f64, dim: usize) -> Self {
        L1Norm { weights: vec![lambda; dim] }
    }

    pub fn weighted(weights: Vec<f64>) -> Self {
        L1Norm { weights }
    }
}

impl Prox for L1Norm {
    fn prox(&self, v: &[f64], step: f64, out: &mut [f64]) {
        for ((o, &x), &w) in out.iter_mut().zip(v).zip(&self.weights) {
            *o = soft_threshold_scalar(step * w, x);
        }
    }
    fn value(&self, z: &[f64]) -> f64 {
        z.iter().zip(&self.weights).map(|(x, w)| w * x.abs()).sum()
    }
}

/// `Σᵢ scale·φ_{τᵢ}(zᵢ)` with a level per coordinate.
#[derive(Debug, Clone)]
pub struct CheckSum {
    taus: Vec<f64>,
    scale: f64,
}

impl CheckSum {
    pub fn new(taus: Vec<f64>, scale: f64) -> Self {
        CheckSum { taus, scale }
    }
}

impl Prox for CheckSum {
    fn prox(&self, v: &[f64], step: f64, out: &mut [f64]) {
        let w = step * self.scale;
        for ((o, &x), &t) in out.iter_mut().zip(v).zip(&self.taus) {
            *o = prox_check(t, w, x);
        }
    }
    fn value(&self, z: &[f64]) -> f64 {
        self.scale * z.iter().zip(&self.taus).map(|(&x, &t)| crate::data::check::check(t, x)).sum::<f64>()
    }
}

/// Indicator of `{z : |zᵢ − cᵢ| ≤ rᵢ}`.
#[derive(Debug, Clone)]
pub struct LinfBall {
    center: Vec<f64>,
    radius: Vec<f64>,
}

impl LinfBall {
    pub fn new(center: Vec<f64>, radius: Vec<f64>) -> Self {
        LinfBall { center, radius }
    }

    pub fn centered(radius: f64, dim: usize) -> Self {
        LinfBall { center: vec![0.0; dim], radius: vec![radius; dim] }
    }
}

impl Prox for LinfBall {
    fn prox(&self, v: &[f64], _step: f64, out: &mut [f64]) {
        for (((o, &x), &c), &r) in out.iter_mut().zip(v).zip(&self.center).zip(&self.radius) {
            *o = c + (x - c).clamp(-r, r);
        }
    }
    fn value(&self, z: &[f64]) -> f64 {
        let feasible = z
            .iter()
            .zip(&self.center)
            .zip(&self.radius)
            .all(|((&x, &c), &r)| (x - c).abs() <= r + 1e-6 * (1.0 + r));
        if feasible {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// `(w/2)·‖z − t‖²`.
#[derive(Debug, Clone)]
pub struct SquaredDistance {
    target: Vec<f64>,
    weight: f64,
}

impl SquaredDistance {
    pub fn new(target: Vec<f64>, weight: f64) -> Self {
        SquaredDistance { target, weight }
    }
}

impl Prox for SquaredDistance {
    fn prox(&self, v: &[f64], step: f64, out: &mut [f64]) {
        let sw = step * self.weight;
        for ((o, &x), &t) in out.iter_mut().zip(v).zip(&self.target) {
            *o = (x + sw * t) / (1.0 + sw);
        }
    }
    fn value(&self, z: &[f64]) -> f64 {
        0.5 * self.weight * z.iter().zip(&self.target).map(|(x, t)| (x - t) * (x - t)).sum::<f64>()
    }
}

/// Separable sum of functions acting on consecutive blocks.
pub struct Stacked<'a> {
    blocks: Vec<(usize, &'a dyn Prox)>,
}

impl<'a> Stacked<'a> {
    pub fn new(blocks: Vec<(usize, &'a dyn Prox)>) -> Self {
        Stacked { blocks }
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|b| b.0).sum()
    }
}

impl Prox for Stacked<'_> {
    fn prox(&self, v: &[f64], step: f64, out: &mut [f64]) {
        let mut at = 0;
        for &(len, f) in &self.blocks {
            f.prox(&v[at..at + len], step, &mut out[at..at + len]);
            at += len;
        }
    }
    fn value(&self, z: &[f64]) -> f64 {
        let mut at = 0;
        let mut total = 0.0;
        for &(len, f) in &self.blocks {
            total += f.value(&z[at..at + len]);
            at += len;
        }
        total
    }
}
