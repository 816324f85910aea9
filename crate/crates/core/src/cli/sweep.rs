//! Benchmark pipeline: synthesize, fit local posteriors, fuse, evaluate.

use std::time::Instant;

use anyhow::Context;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::expfam::{ExpFamComponent, PosteriorBundle};
use crate::fusion::{fuse, FusionConfig, FusionResult};
use crate::localvi::{fit_bayesian_gmm, GmmPrior, DEFAULT_MAX_ITERS as VI_MAX_ITERS, DEFAULT_TOL as VI_TOL, WEIGHT_FLOOR};
use crate::metrics::{point_set_hausdorff, polytope_hausdorff, size_estimation_error, PointSet};
use crate::rng::{derive_seed, Purpose};
use crate::synthgen::{generate_benchmark, GroundTruth, LocalMixture, SynthConfig};
use crate::{Error, Result};

pub const METHOD_FUSION: &str = "kl-fusion";
pub const METHOD_POOLED: &str = "pooled-vi";

/// One CSV line of a benchmark sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub seed: u64,
    pub separation: f64,
    pub noise: f64,
    pub method: String,
    pub hausdorff: f64,
    pub size_error: usize,
    #[serde(rename = "fused_G")]
    pub fused_g: usize,
    pub wall_seconds: f64,
}

pub const SWEEP_HEADER: [&str; 8] = [
    "seed",
    "separation",
    "noise",
    "method",
    "hausdorff",
    "size_error",
    "fused_G",
    "wall_seconds",
];

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOptions {
    pub fusion: FusionConfig,
    pub vi_max_iters: usize,
    pub vi_tol: f64,
    /// Also fit one variational GMM to the concatenated data.
    pub pooled: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            fusion: FusionConfig::default(),
            vi_max_iters: VI_MAX_ITERS,
            vi_tol: VI_TOL,
            pooled: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub hausdorff: f64,
    pub size_error: usize,
    pub fused_g: usize,
}

/// Location vectors of fused components.
pub fn locations(components: &[ExpFamComponent]) -> Vec<Vec<f64>> {
    components.iter().map(ExpFamComponent::location).collect()
}

pub fn evaluate(estimated: &[Vec<f64>], truth: &GroundTruth, point_set: bool) -> Result<Evaluation> {
    let est = PointSet::new(estimated.to_vec())?;
    let tru = PointSet::from_vectors(truth.means.clone())?;
    let hausdorff = if point_set {
        point_set_hausdorff(&est, &tru)?
    } else {
        polytope_hausdorff(&est, &tru)?
    };
    Ok(Evaluation {
        hausdorff,
        size_error: size_estimation_error(est.len(), tru.len()),
        fused_g: est.len(),
    })
}

/// Seed used for the local fit of dataset `j`.
pub fn vi_seed(seed: u64, j: usize) -> u64 {
    derive_seed(seed, Purpose::VariationalInit, j as u64)
}

/// Fits one variational GMM with `k` components and returns its bundle.
pub fn fit_local(data: &DMatrix<f64>, k: usize, id: &str, seed: u64, max_iters: usize, tol: f64) -> Result<PosteriorBundle> {
    let k = k.clamp(1, data.nrows());
    let prior = GmmPrior::default_for(data, k)?;
    fit_bayesian_gmm(data, k, &prior, max_iters, tol, seed)?.to_bundle(id)
}

/// Local posteriors for every dataset, with `K_j` equal to the true local size.
pub fn local_bundles(
    locals: &[LocalMixture],
    data: &[DMatrix<f64>],
    seed: u64,
    opts: &PipelineOptions,
) -> Result<Vec<PosteriorBundle>> {
    locals
        .par_iter()
        .zip(data.par_iter())
        .enumerate()
        .map(|(j, (local, x))| fit_local(x, local.len(), &dataset_id(j), vi_seed(seed, j), opts.vi_max_iters, opts.vi_tol))
        .collect()
}

pub fn dataset_id(j: usize) -> String {
    format!("data_{j:03}")
}

/// Runs fusion and returns the result with its wall-clock time in seconds.
pub fn timed_fuse(bundles: &[PosteriorBundle], config: &FusionConfig) -> Result<(FusionResult, f64)> {
    let start = Instant::now();
    let result = fuse(bundles, config)?;
    Ok((result, start.elapsed().as_secs_f64()))
}

/// Full pipeline for one synthetic configuration.
pub fn run_cell(config: &SynthConfig, opts: &PipelineOptions) -> Result<Vec<SweepRow>> {
    let (truth, locals, data) = generate_benchmark(config)?;
    let bundles = local_bundles(&locals, &data, config.seed, opts)?;
    let fusion_config = FusionConfig {
        seed: derive_seed(config.seed, Purpose::FusionInit, 0),
        ..opts.fusion.clone()
    };
    let (result, secs) = timed_fuse(&bundles, &fusion_config)?;
    let eval = evaluate(&locations(&result.global_model.components), &truth, false)?;
    let row = |method: &str, e: Evaluation, wall_seconds: f64| SweepRow {
        seed: config.seed,
        separation: config.separation,
        noise: config.noise,
        method: method.to_string(),
        hausdorff: e.hausdorff,
        size_error: e.size_error,
        fused_g: e.fused_g,
        wall_seconds,
    };
    let mut rows = vec![row(METHOD_FUSION, eval, secs)];
    if opts.pooled {
        let start = Instant::now();
        let pooled = concat_rows(&data);
        let k = config.n_global;
        let prior = GmmPrior::default_for(&pooled, k)?;
        let fit = fit_bayesian_gmm(&pooled, k, &prior, opts.vi_max_iters, opts.vi_tol, vi_seed(config.seed, usize::MAX))?;
        let (components, _) = fit.export(WEIGHT_FLOOR)?;
        let means: Vec<Vec<f64>> = components.iter().map(|c| c.mean().iter().copied().collect()).collect();
        let secs = start.elapsed().as_secs_f64();
        rows.push(row(METHOD_POOLED, evaluate(&means, &truth, false)?, secs));
    }
    Ok(rows)
}

fn concat_rows(data: &[DMatrix<f64>]) -> DMatrix<f64> {
    let d = data[0].ncols();
    let n: usize = data.iter().map(|x| x.nrows()).sum();
    let mut out = DMatrix::zeros(n, d);
    let mut at = 0;
    for x in data {
        out.rows_mut(at, x.nrows()).copy_from(x);
        at += x.nrows();
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPlan {
    pub base: SynthConfig,
    pub separations: Vec<f64>,
    pub noises: Vec<f64>,
    pub n_seeds: u64,
}

impl SweepPlan {
    /// Cell configurations in output order: separation, then noise, then seed.
    pub fn cells(&self) -> Vec<SynthConfig> {
        let mut out = Vec::new();
        for &separation in &self.separations {
            for &noise in &self.noises {
                for i in 0..self.n_seeds {
                    out.push(SynthConfig {
                        separation,
                        noise,
                        seed: self.base.seed + i,
                        ..self.base.clone()
                    });
                }
            }
        }
        out
    }
}

/// Runs every cell on a pool of `jobs` threads; rows keep grid order.
pub fn run_sweep(plan: &SweepPlan, opts: &PipelineOptions, jobs: usize) -> anyhow::Result<Vec<SweepRow>> {
    if plan.separations.is_empty() || plan.noises.is_empty() || plan.n_seeds == 0 {
        return Err(Error::Config("sweep grid is empty".into()).into());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .context("cannot start worker pool")?;
    let cells = plan.cells();
    let per_cell: Vec<anyhow::Result<Vec<SweepRow>>> = pool.install(|| {
        cells
            .par_iter()
            .map(|c| {
                run_cell(c, opts).with_context(|| {
                    format!("cell separation={} noise={} seed={}", c.separation, c.noise, c.seed)
                })
            })
            .collect()
    });
    let mut rows = Vec::new();
    for r in per_cell {
        rows.extend(r?);
    }
    Ok(rows)
}

pub fn rows_to_csv(rows: &[SweepRow], header: bool) -> anyhow::Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    if header {
        w.write_record(SWEEP_HEADER)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

pub fn rows_from_csv(text: &str) -> anyhow::Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != SWEEP_HEADER {
        anyhow::bail!("unexpected sweep header {header:?}");
    }
    Ok(r.deserialize().collect::<std::result::Result<Vec<SweepRow>, _>>()?)
}
