//! Synthetic heterogeneous Gaussian-mixture benchmarks.
//!
//! A ground truth of `G` Gaussian components in `ℝ^D` is drawn first. Each of
//! `J` local mixtures then keeps every global component independently with
//! that component's inclusion probability, jitters the kept means with
//! isotropic noise of standard deviation `σ`, perturbs the covariances with a
//! mean-preserving Wishart draw and draws mixture weights from a flat
//! Dirichlet. Datasets are i.i.d. samples from the local mixtures.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::linalg::{cholesky, random_orthogonal, sample_wishart, standard_normal_vector, symmetrize};
use crate::rng::{derive_seed, stream, Purpose};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// True number of global components.
    pub n_global: usize,
    pub dim: usize,
    pub n_datasets: usize,
    /// Separation scale `s`; global means have per-coordinate variance `s·G`.
    pub separation: f64,
    /// Standard deviation of the noise added to local means.
    pub noise: f64,
    pub n_per_dataset: usize,
    pub seed: u64,
    /// Replaces the random inclusion probabilities with one fixed value in (0, 1].
    pub inclusion_override: Option<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_global: 5,
            dim: 10,
            n_datasets: 50,
            separation: 0.5,
            noise: 0.5,
            n_per_dataset: 500,
            seed: 0,
            inclusion_override: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_global < 1 || self.dim < 1 || self.n_datasets < 1 || self.n_per_dataset < 1 {
            return Err(Error::Config("G, D, J and n must all be at least 1".into()));
        }
        if !(self.separation > 0.0) || !self.separation.is_finite() {
            return Err(Error::Config(format!("separation {} must be positive", self.separation)));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err(Error::Config(format!("noise {} must be nonnegative", self.noise)));
        }
        if let Some(p) = self.inclusion_override {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::Config(format!("inclusion probability {p} outside (0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
    pub inclusion: Vec<f64>,
}

impl GroundTruth {
    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, |m| m.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalMixture {
    /// Indices into the ground truth, ascending.
    pub subset: Vec<usize>,
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
    pub weights: Vec<f64>,
}

impl LocalMixture {
    pub fn len(&self) -> usize {
        self.subset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subset.is_empty()
    }
}

pub fn generate_global(config: &SynthConfig) -> Result<GroundTruth> {
    config.validate()?;
    let mut rng = stream(config.seed, Purpose::GroundTruth, 0);
    let d = config.dim;
    let sd = (config.separation * config.n_global as f64).sqrt();
    let mut means = Vec::with_capacity(config.n_global);
    let mut covariances = Vec::with_capacity(config.n_global);
    let mut inclusion = Vec::with_capacity(config.n_global);
    for _ in 0..config.n_global {
        means.push(standard_normal_vector(&mut rng, d) * sd);
        let q = random_orthogonal(&mut rng, d);
        let eig = DVector::from_iterator(d, (0..d).map(|_| rng.random_range(0.5..1.5)));
        covariances.push(symmetrize(&(&q * DMatrix::from_diagonal(&eig) * q.transpose())));
        let p = rng.random_range(0.3..0.9);
        inclusion.push(config.inclusion_override.unwrap_or(p));
    }
    Ok(GroundTruth {
        means,
        covariances,
        inclusion,
    })
}

pub fn generate_local_models(truth: &GroundTruth, config: &SynthConfig) -> Result<Vec<LocalMixture>> {
    config.validate()?;
    if truth.is_empty() {
        return Err(Error::Empty("ground truth has no components".into()));
    }
    let d = truth.dim();
    let df = d as f64 + 2.0;
    let scale_chols = truth
        .covariances
        .iter()
        .map(|c| cholesky(&(c / df)).map(|ch| ch.l()))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::domain("covariances", "ground-truth covariance is not positive definite"))?;

    Ok((0..config.n_datasets)
        .map(|j| {
            let mut rng = stream(config.seed, Purpose::LocalModel, j as u64);
            let subset = loop {
                let s: Vec<usize> = (0..truth.len())
                    .filter(|&g| rng.random::<f64>() < truth.inclusion[g])
                    .collect();
                if !s.is_empty() {
                    break s;
                }
            };
            let means = subset
                .iter()
                .map(|&g| &truth.means[g] + standard_normal_vector(&mut rng, d) * config.noise)
                .collect();
            let covariances = subset
                .iter()
                .map(|&g| sample_wishart(&mut rng, &scale_chols[g], df))
                .collect();
            let raw: Vec<f64> = subset.iter().map(|_| Exp1.sample(&mut rng)).collect();
            let total: f64 = raw.iter().sum();
            LocalMixture {
                subset,
                means,
                covariances,
                weights: raw.iter().map(|w| w / total).collect(),
            }
        })
        .collect())
}

/// Draws `n` rows from the mixture; the result is `n × D`.
pub fn sample_local_dataset(local: &LocalMixture, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    if n < 1 {
        return Err(Error::Value("n must be at least 1".into()));
    }
    if local.is_empty() {
        return Err(Error::Empty("local mixture has no components".into()));
    }
    let d = local.means[0].len();
    let chols = local
        .covariances
        .iter()
        .map(|c| cholesky(c).map(|ch| ch.l()))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::domain("covariances", "local covariance is not positive definite"))?;
    let mut rng = stream(seed, Purpose::DatasetSample, 0);
    let mut data = DMatrix::zeros(n, d);
    for i in 0..n {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = local.len() - 1;
        for (idx, w) in local.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = idx;
                break;
            }
        }
        let x = &local.means[k] + &chols[k] * standard_normal_vector(&mut rng, d);
        data.row_mut(i).copy_from(&x.transpose());
    }
    Ok(data)
}

/// Seed used for dataset `j` of a benchmark run.
pub fn dataset_seed(seed: u64, j: usize) -> u64 {
    derive_seed(seed, Purpose::DatasetSample, j as u64)
}

/// Ground truth, local mixtures and sampled datasets for one configuration.
pub fn generate_benchmark(config: &SynthConfig) -> Result<(GroundTruth, Vec<LocalMixture>, Vec<DMatrix<f64>>)> {
    let truth = generate_global(config)?;
    let locals = generate_local_models(&truth, config)?;
    let data = locals
        .iter()
        .enumerate()
        .map(|(j, l)| sample_local_dataset(l, config.n_per_dataset, dataset_seed(config.seed, j)))
        .collect::<Result<Vec<_>>>()?;
    Ok((truth, locals, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(seed: u64) -> SynthConfig {
        SynthConfig {
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn covariances_are_spd_and_output_is_deterministic() {
        let t = generate_global(&cfg(4)).unwrap();
        assert_eq!(t.len(), 5);
        assert_eq!(t.dim(), 10);
        for c in &t.covariances {
            assert_eq!(c, &c.transpose());
            assert!(cholesky(c).is_some());
        }
        assert!(t.inclusion.iter().all(|&p| p > 0.0 && p < 1.0));
        assert_eq!(t, generate_global(&cfg(4)).unwrap());
        assert_ne!(t, generate_global(&cfg(5)).unwrap());
    }

    #[test]
    fn mean_spread_grows_with_square_root_of_separation() {
        let mean_dist = |s: f64| -> f64 {
            let mut acc = 0.0;
            let mut n = 0;
            for seed in 0..100 {
                let t = generate_global(&SynthConfig {
                    separation: s,
                    seed,
                    ..SynthConfig::default()
                })
                .unwrap();
                for a in 0..t.len() {
                    for b in a + 1..t.len() {
                        acc += (&t.means[a] - &t.means[b]).norm();
                        n += 1;
                    }
                }
            }
            acc / n as f64
        };
        let (d01, d1, d10) = (mean_dist(0.1), mean_dist(1.0), mean_dist(10.0));
        // log-log slope between decades should be 1/2
        let slope_lo = (d1 / d01).log10();
        let slope_hi = (d10 / d1).log10();
        assert!((slope_lo - 0.5).abs() < 0.03, "{slope_lo}");
        assert!((slope_hi - 0.5).abs() < 0.03, "{slope_hi}");
    }

    #[test]
    fn zero_noise_keeps_global_means() {
        let c = SynthConfig { noise: 0.0, ..cfg(1) };
        let t = generate_global(&c).unwrap();
        for l in generate_local_models(&t, &c).unwrap() {
            assert!(!l.is_empty());
            for (g, m) in l.subset.iter().zip(&l.means) {
                assert_eq!(m, &t.means[*g]);
            }
            assert!((l.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for cov in &l.covariances {
                assert!(cholesky(cov).is_some());
            }
        }
    }

    #[test]
    fn inclusion_frequencies_match_probabilities() {
        // With 20 components an empty draw (and hence resampling) is negligible.
        let c = SynthConfig {
            n_global: 20,
            dim: 2,
            n_datasets: 5000,
            ..cfg(2)
        };
        let t = generate_global(&c).unwrap();
        let locals = generate_local_models(&t, &c).unwrap();
        for (g, &p) in t.inclusion.iter().enumerate() {
            let hits = locals.iter().filter(|l| l.subset.contains(&g)).count() as f64;
            let freq = hits / 5000.0;
            let se = (p * (1.0 - p) / 5000.0).sqrt();
            assert!((freq - p).abs() <= 3.0 * se, "component {g}: {freq} vs {p}");
        }
    }

    #[test]
    fn resampling_conditions_on_a_nonempty_subset() {
        let c = SynthConfig {
            n_global: 2,
            dim: 2,
            n_datasets: 5000,
            ..cfg(3)
        };
        let t = generate_global(&c).unwrap();
        let locals = generate_local_models(&t, &c).unwrap();
        assert!(locals.iter().all(|l| !l.is_empty()));
        let nonempty = 1.0 - (1.0 - t.inclusion[0]) * (1.0 - t.inclusion[1]);
        for g in 0..2 {
            let p = t.inclusion[g] / nonempty;
            let freq = locals.iter().filter(|l| l.subset.contains(&g)).count() as f64 / 5000.0;
            let se = (p * (1.0 - p) / 5000.0).sqrt();
            assert!((freq - p).abs() <= 3.0 * se, "component {g}: {freq} vs {p}");
        }
    }

    #[test]
    fn wishart_perturbation_preserves_mean_covariance() {
        let c = SynthConfig {
            n_global: 1,
            dim: 3,
            n_datasets: 4000,
            inclusion_override: Some(1.0),
            ..cfg(6)
        };
        let t = generate_global(&c).unwrap();
        let locals = generate_local_models(&t, &c).unwrap();
        let mut acc = DMatrix::zeros(3, 3);
        for l in &locals {
            acc += &l.covariances[0];
        }
        acc /= locals.len() as f64;
        assert!((acc - &t.covariances[0]).amax() < 0.08);
    }

    #[test]
    fn dataset_sampling() {
        let local = LocalMixture {
            subset: vec![0],
            means: vec![DVector::from_vec(vec![1.0, -2.0])],
            covariances: vec![DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0])],
            weights: vec![1.0],
        };
        let one = sample_local_dataset(&local, 1, 0).unwrap();
        assert_eq!(one.nrows(), 1);
        let n = 20_000;
        let x = sample_local_dataset(&local, n, 1).unwrap();
        assert_eq!(x, sample_local_dataset(&local, n, 1).unwrap());
        let mean = x.row_mean();
        for (d, var) in [(0, 1.0f64), (1, 2.0)] {
            let tol = 3.0 * var.sqrt() / (n as f64).sqrt();
            assert!((mean[d] - local.means[0][d]).abs() < tol);
        }
        assert!(sample_local_dataset(&local, 0, 1).is_err());
    }

    #[test]
    fn benchmark_is_reproducible() {
        let c = SynthConfig {
            n_datasets: 3,
            n_per_dataset: 20,
            ..cfg(7)
        };
        let (t1, l1, d1) = generate_benchmark(&c).unwrap();
        let (t2, l2, d2) = generate_benchmark(&c).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(l1, l2);
        assert_eq!(d1, d2);
        assert_ne!(d1[0], d1[1]);
    }

    #[test]
    fn invalid_configs() {
        assert!(generate_global(&SynthConfig { separation: 0.0, ..cfg(0) }).is_err());
        assert!(generate_global(&SynthConfig { noise: -1.0, ..cfg(0) }).is_err());
        assert!(generate_global(&SynthConfig { n_global: 0, ..cfg(0) }).is_err());
        assert!(generate_global(&SynthConfig { inclusion_override: Some(0.0), ..cfg(0) }).is_err());
    }
}
