use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::VARIANCE_FLOOR;
use crate::{Error, Result};

/// Gaussian with diagonal covariance.
///
/// Natural parameters are interleaved per dimension as
/// `(μ_d / σ_d², −1 / (2σ_d²))`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    variance: Vec<f64>,
}

impl DiagGaussian {
    /// Variances in `[0, 1e-12)` are raised to the floor; negative or
    /// non-finite entries are rejected.
    pub fn new(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::domain("mean", "dimension must be positive"));
        }
        if mean.len() != variance.len() {
            return Err(Error::domain(
                "variance",
                format!("length {} does not match mean length {}", variance.len(), mean.len()),
            ));
        }
        if let Some((i, v)) = mean.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::domain(format!("mean[{i}]"), format!("{v} is not finite")));
        }
        let mut variance = variance;
        for (i, v) in variance.iter_mut().enumerate() {
            if !v.is_finite() || *v < 0.0 {
                return Err(Error::domain(
                    format!("variance[{i}]"),
                    format!("{v} is not a finite nonnegative number"),
                ));
            }
            *v = v.max(VARIANCE_FLOOR);
        }
        Ok(Self { mean, variance })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variance(&self) -> &[f64] {
        &self.variance
    }

    pub(crate) fn to_natural(&self) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.variance)
            .flat_map(|(m, v)| [m / v, -0.5 / v])
            .collect()
    }

    pub(crate) fn from_natural(dim: usize, eta: &[f64]) -> Result<Self> {
        if eta.len() != 2 * dim {
            return Err(Error::domain("eta", format!("expected length {}, got {}", 2 * dim, eta.len())));
        }
        let mut mean = Vec::with_capacity(dim);
        let mut variance = Vec::with_capacity(dim);
        for (d, pair) in eta.chunks_exact(2).enumerate() {
            if !(pair[1] < 0.0) || !pair[0].is_finite() {
                return Err(Error::domain(
                    format!("eta[{}]", 2 * d + 1),
                    "precision coordinate must be finite and negative",
                ));
            }
            let var = -0.5 / pair[1];
            variance.push(var);
            mean.push(pair[0] * var);
        }
        Self::new(mean, variance)
    }

    pub(crate) fn kl(&self, p: &Self) -> f64 {
        self.mean
            .iter()
            .zip(&self.variance)
            .zip(p.mean.iter().zip(&p.variance))
            .map(|((mq, vq), (mp, vp))| {
                let diff = mp - mq;
                0.5 * (vq / vp + diff * diff / vp - 1.0 + (vp / vq).ln())
            })
            .sum()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.mean)
            .zip(&self.variance)
            .map(|((x, m), v)| -0.5 * ((2.0 * PI * v).ln() + (x - m) * (x - m) / v))
            .sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.variance)
            .map(|(m, v)| {
                let z: f64 = StandardNormal.sample(rng);
                m + v.sqrt() * z
            })
            .collect()
    }
}
