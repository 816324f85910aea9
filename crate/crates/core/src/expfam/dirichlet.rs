use rand::Rng;
use rand_distr::{Distribution, Gamma};

use super::ALPHA_FLOOR;
use crate::special::{digamma, ln_gamma};
use crate::{Error, Result};

/// Dirichlet distribution with natural parameters `α − 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dirichlet {
    alpha: Vec<f64>,
}

impl Dirichlet {
    /// Concentrations in `[0, 1e-8)` are raised to the floor.
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() < 2 {
            return Err(Error::domain("alpha", "at least two categories are required"));
        }
        let mut alpha = alpha;
        for (i, a) in alpha.iter_mut().enumerate() {
            if !a.is_finite() || *a < 0.0 {
                return Err(Error::domain(
                    format!("alpha[{i}]"),
                    format!("{a} is not a finite nonnegative number"),
                ));
            }
            *a = a.max(ALPHA_FLOOR);
        }
        Ok(Self { alpha })
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub(crate) fn to_natural(&self) -> Vec<f64> {
        self.alpha.iter().map(|a| a - 1.0).collect()
    }

    pub(crate) fn from_natural(dim: usize, eta: &[f64]) -> Result<Self> {
        if eta.len() != dim {
            return Err(Error::domain("eta", format!("expected length {dim}, got {}", eta.len())));
        }
        if let Some((i, _)) = eta.iter().enumerate().find(|(_, e)| !(**e > -1.0) || !e.is_finite()) {
            return Err(Error::domain(format!("eta[{i}]"), "must be finite and greater than -1"));
        }
        Self::new(eta.iter().map(|e| e + 1.0).collect())
    }

    pub(crate) fn kl(&self, p: &Self) -> f64 {
        let q0: f64 = self.alpha.iter().sum();
        let p0: f64 = p.alpha.iter().sum();
        let psi_q0 = digamma(q0);
        let mut kl = ln_gamma(q0) - ln_gamma(p0);
        for (aq, ap) in self.alpha.iter().zip(&p.alpha) {
            kl += ln_gamma(*ap) - ln_gamma(*aq) + (aq - ap) * (digamma(*aq) - psi_q0);
        }
        kl
    }

    /// Log-density at a point given by its log-coordinates.
    pub fn log_density_at_log(&self, log_x: &[f64]) -> f64 {
        let a0: f64 = self.alpha.iter().sum();
        let mut lp = ln_gamma(a0);
        for (a, lx) in self.alpha.iter().zip(log_x) {
            lp += (a - 1.0) * lx - ln_gamma(*a);
        }
        lp
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
        self.log_density_at_log(&lx)
    }

    /// Draws a point and returns its log-coordinates. Sampling in log space
    /// keeps small concentrations from underflowing to exact zeros.
    pub fn sample_log<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        // Gamma(a) = Gamma(a + 1) · U^{1/a}
        let log_g: Vec<f64> = self
            .alpha
            .iter()
            .map(|&a| {
                let g: f64 = Gamma::new(a + 1.0, 1.0).expect("positive shape").sample(rng);
                let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
                g.ln() + u.ln() / a
            })
            .collect();
        let hi = log_g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = hi + log_g.iter().map(|v| (v - hi).exp()).sum::<f64>().ln();
        log_g.into_iter().map(|v| v - lse).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.sample_log(rng).into_iter().map(f64::exp).collect()
    }
}
