use std::f64::consts::{LN_2, PI};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::linalg::{
    asymmetry, cholesky, ln_det_from_cholesky, repair_spd, sample_wishart, standard_normal_vector,
    symmetrize, trace_of_product_sym,
};
use crate::special::{ln_multigamma, multidigamma};
use crate::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-8;

/// Normal–Wishart distribution over a Gaussian's mean and precision:
/// `Λ ~ Wishart(W, ν)`, `μ | Λ ~ N(m, (κΛ)⁻¹)`.
///
/// Natural-parameter layout, with `S = W⁻¹ + κ m mᵀ`:
/// `[κ m (D entries), κ, upper triangle of S row by row (D(D+1)/2), ν − D]`.
#[derive(Debug, Clone)]
pub struct NormalWishart {
    mean: DVector<f64>,
    kappa: f64,
    scale: DMatrix<f64>,
    dof: f64,
    scale_inv: DMatrix<f64>,
    scale_chol: DMatrix<f64>,
    ln_det_scale: f64,
}

impl PartialEq for NormalWishart {
    fn eq(&self, other: &Self) -> bool {
        self.mean == other.mean && self.kappa == other.kappa && self.scale == other.scale && self.dof == other.dof
    }
}

pub(crate) fn natural_len(dim: usize) -> usize {
    dim + 1 + dim * (dim + 1) / 2 + 1
}

/// Recovers D from the natural vector length.
pub(crate) fn dim_from_natural_len(len: usize) -> Option<usize> {
    (1..=4096).find(|&d| natural_len(d) == len)
}

impl NormalWishart {
    pub fn new(mean: DVector<f64>, kappa: f64, scale: DMatrix<f64>, dof: f64) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::domain("mean", "dimension must be positive"));
        }
        if let Some((i, v)) = mean.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::domain(format!("mean[{i}]"), format!("{v} is not finite")));
        }
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(Error::domain("kappa", format!("{kappa} must be finite and positive")));
        }
        if scale.nrows() != d || scale.ncols() != d {
            return Err(Error::domain(
                "scale",
                format!("expected {d}x{d}, got {}x{}", scale.nrows(), scale.ncols()),
            ));
        }
        if scale.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("scale", "entries must be finite"));
        }
        if asymmetry(&scale) > SYMMETRY_TOL {
            return Err(Error::domain("scale", "matrix is not symmetric"));
        }
        if !(dof > d as f64 - 1.0) || !dof.is_finite() {
            return Err(Error::domain("dof", format!("{dof} must be finite and exceed dim - 1 = {}", d - 1)));
        }
        let scale = symmetrize(&scale);
        let chol = cholesky(&scale).ok_or_else(|| Error::domain("scale", "matrix is not positive definite"))?;
        let ln_det_scale = ln_det_from_cholesky(&chol);
        let scale_inv = symmetrize(&chol.inverse());
        let scale_chol = chol.l();
        Ok(Self {
            mean,
            kappa,
            scale,
            dof,
            scale_inv,
            scale_chol,
            ln_det_scale,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn scale(&self) -> &DMatrix<f64> {
        &self.scale
    }

    pub fn dof(&self) -> f64 {
        self.dof
    }

    /// E[Λ⁻¹] = (ν W)⁻¹ · ν/(ν − D − 1) is only finite for ν > D + 1; this
    /// returns the plug-in covariance `(ν W)⁻¹` instead.
    pub fn expected_covariance(&self) -> DMatrix<f64> {
        &self.scale_inv / self.dof
    }

    pub(crate) fn to_natural(&self) -> Vec<f64> {
        let d = self.dim();
        let mut eta = Vec::with_capacity(natural_len(d));
        eta.extend(self.mean.iter().map(|m| self.kappa * m));
        eta.push(self.kappa);
        for i in 0..d {
            for j in i..d {
                eta.push(self.scale_inv[(i, j)] + self.kappa * self.mean[i] * self.mean[j]);
            }
        }
        eta.push(self.dof - d as f64);
        eta
    }

    /// Inverts [`to_natural`]. With `repair`, the recovered `W⁻¹` is
    /// symmetrized and shifted to positive definiteness if rounding pushed
    /// its smallest eigenvalue to zero or below.
    pub(crate) fn from_natural(dim: usize, eta: &[f64], repair: bool) -> Result<Self> {
        if eta.len() != natural_len(dim) {
            return Err(Error::domain(
                "eta",
                format!("expected length {}, got {}", natural_len(dim), eta.len()),
            ));
        }
        if eta.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("eta", "entries must be finite"));
        }
        let kappa = eta[dim];
        if !(kappa > 0.0) {
            return Err(Error::domain(format!("eta[{dim}]"), "kappa coordinate must be positive"));
        }
        let mean = DVector::from_iterator(dim, eta[..dim].iter().map(|v| v / kappa));
        let mut s = DMatrix::zeros(dim, dim);
        let mut k = dim + 1;
        for i in 0..dim {
            for j in i..dim {
                s[(i, j)] = eta[k];
                s[(j, i)] = eta[k];
                k += 1;
            }
        }
        let mut scale_inv = s - &mean * mean.transpose() * kappa;
        if repair {
            scale_inv = repair_spd(&scale_inv);
        }
        let chol = cholesky(&scale_inv)
            .ok_or_else(|| Error::domain("eta", "recovered inverse scale matrix is not positive definite"))?;
        let scale = symmetrize(&chol.inverse());
        let dof = eta[k] + dim as f64;
        Self::new(mean, kappa, scale, dof)
    }

    /// E_q[ln |Λ|].
    pub fn expected_ln_det_precision(&self) -> f64 {
        let d = self.dim();
        multidigamma(self.dof / 2.0, d) + d as f64 * LN_2 + self.ln_det_scale
    }

    pub(crate) fn kl(&self, p: &Self) -> f64 {
        let d = self.dim() as f64;
        let (nq, np) = (self.dof, p.dof);
        // KL between the Wishart marginals.
        let tr = trace_of_product_sym(&p.scale_inv, &self.scale);
        let wishart = (nq - np) / 2.0 * multidigamma(nq / 2.0, self.dim())
            + np / 2.0 * (p.ln_det_scale - self.ln_det_scale)
            + nq / 2.0 * (tr - d)
            - ln_multigamma(nq / 2.0, self.dim())
            + ln_multigamma(np / 2.0, self.dim());
        // Expected KL between the conditional Gaussians of the mean.
        let ratio = p.kappa / self.kappa;
        let delta = &p.mean - &self.mean;
        let quad = (delta.transpose() * &self.scale * &delta)[(0, 0)];
        let gaussian = 0.5 * (d * (ratio - 1.0 - ratio.ln()) + p.kappa * nq * quad);
        wishart + gaussian
    }

    /// Joint log-density at `(μ, Λ)`.
    pub fn log_density(&self, mu: &DVector<f64>, precision: &DMatrix<f64>) -> f64 {
        let d = self.dim() as f64;
        let chol = match cholesky(precision) {
            Some(c) => c,
            None => return f64::NEG_INFINITY,
        };
        let ln_det_prec = ln_det_from_cholesky(&chol);
        let ln_wishart = (self.dof - d - 1.0) / 2.0 * ln_det_prec
            - 0.5 * trace_of_product_sym(&self.scale_inv, precision)
            - self.dof * d / 2.0 * LN_2
            - self.dof / 2.0 * self.ln_det_scale
            - ln_multigamma(self.dof / 2.0, self.dim());
        let diff = mu - &self.mean;
        let quad = (diff.transpose() * precision * &diff)[(0, 0)];
        let ln_gauss = -d / 2.0 * (2.0 * PI).ln() + d / 2.0 * self.kappa.ln() + 0.5 * ln_det_prec - self.kappa / 2.0 * quad;
        ln_wishart + ln_gauss
    }

    /// Draws `(μ, Λ)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (DVector<f64>, DMatrix<f64>) {
        let precision = sample_wishart(rng, &self.scale_chol, self.dof);
        let chol = cholesky(&(&precision * self.kappa)).expect("Wishart draw is positive definite");
        // x = L⁻ᵀ z has covariance (L Lᵀ)⁻¹
        let z = standard_normal_vector(rng, self.dim());
        let x = chol.l().transpose().solve_upper_triangular(&z).expect("nonsingular factor");
        (&self.mean + x, precision)
    }
}
