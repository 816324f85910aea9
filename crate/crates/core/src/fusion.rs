//! Alternating fusion of local posteriors into a global model.
//!
//! Each iteration (1) assigns every local factor to a global factor, one
//! dataset at a time, by an exact assignment solve, and (2) resets every
//! global factor to the KL barycenter of the local factors assigned to it.
//!
//! In heterogeneous mode the assignment also pays a group-sparsity penalty
//! `λ Σ_g √(number of datasets using g)` and may open new global factors,
//! so the number of global factors is inferred. KL costs are divided by the
//! population standard deviation of the initial cost matrices, frozen for the
//! whole run, which keeps the objective comparable across iterations.

use std::cmp::Ordering;

use rand::Rng;
use rayon::prelude::*;

use crate::assignment::{
    build_augmented_cost_matrix, build_cost_matrix, solve_rectangular_assignment, AssignmentMatrix, CostMatrix,
};
use crate::expfam::{barycenter, kl_divergence, to_natural, ExpFamComponent, PosteriorBundle, Weights};
use crate::rng::{stream, Purpose};
use crate::{Error, Result};

/// Regularization weight applied to normalized costs.
pub const DEFAULT_LAMBDA: f64 = 0.1;
pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Equal component counts, one-to-one matching, no regularizer.
    Homogeneous,
    /// Partial matching with an inferred number of global components.
    Heterogeneous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    KlKmeansPlusPlus,
    FirstDataset,
}

/// How datasets are visited within one assignment sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sweep {
    /// Ascending dataset index with up-to-date usage counts. Exact block
    /// coordinate descent.
    Sequential,
    /// All datasets against the usage counts of the previous sweep, solved
    /// concurrently. Approximate: the objective may increase.
    ApproximateParallel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig {
    pub lambda_base: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub seed: u64,
    pub mode: Mode,
    pub init: Init,
    pub sweep: Sweep,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            lambda_base: DEFAULT_LAMBDA,
            max_iters: DEFAULT_MAX_ITERS,
            rel_tol: DEFAULT_REL_TOL,
            seed: 0,
            mode: Mode::Heterogeneous,
            init: Init::KlKmeansPlusPlus,
            sweep: Sweep::Sequential,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_base >= 0.0) || !self.lambda_base.is_finite() {
            return Err(Error::Config(format!("lambda = {} must be finite and nonnegative", self.lambda_base)));
        }
        if self.max_iters < 1 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::Config(format!("rel_tol = {} must be positive", self.rel_tol)));
        }
        Ok(())
    }
}

/// Fused components with the number of datasets assigned to each.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalModel {
    pub components: Vec<ExpFamComponent>,
    pub usage: Vec<usize>,
}

impl GlobalModel {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct FusionResult {
    pub global_model: GlobalModel,
    /// One `L_j × G` assignment per input bundle.
    pub assignments: Vec<AssignmentMatrix>,
    /// Objective after each iteration.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    /// Divisor applied to every KL cost.
    pub scale: f64,
}

fn validate_bundles(bundles: &[PosteriorBundle], mode: Mode) -> Result<&ExpFamComponent> {
    let first = bundles
        .iter()
        .flat_map(|b| b.components.first())
        .next()
        .ok_or_else(|| Error::Empty("no posterior bundles with components".into()))?;
    for b in bundles {
        if b.is_empty() {
            return Err(Error::Empty(format!("bundle `{}` has no components", b.id)));
        }
        for c in &b.components {
            first
                .check_compatible(c)
                .map_err(|e| Error::Incompatible(format!("bundle `{}`: {e}", b.id)))?;
        }
    }
    if mode == Mode::Homogeneous {
        let l = bundles[0].len();
        if let Some(b) = bundles.iter().find(|b| b.len() != l) {
            return Err(Error::Config(format!(
                "homogeneous fusion needs equal component counts; `{}` has {} but `{}` has {l}",
                b.id,
                b.len(),
                bundles[0].id
            )));
        }
    }
    Ok(first)
}

/// Orders components by their natural parameters so that seeding does not
/// depend on the order in which factors appear inside each bundle.
fn canonical_pool(bundles: &[PosteriorBundle]) -> Vec<ExpFamComponent> {
    let mut keyed: Vec<(Vec<f64>, usize, &ExpFamComponent)> = bundles
        .iter()
        .flat_map(|b| &b.components)
        .enumerate()
        .map(|(i, c)| (to_natural(c).eta, i, c))
        .collect();
    keyed.sort_by(|a, b| {
        a.0.iter()
            .zip(&b.0)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
            .then(a.1.cmp(&b.1))
    });
    keyed.into_iter().map(|(_, _, c)| c.clone()).collect()
}

/// k-means++ seeding with KL in place of squared Euclidean distance.
///
/// The first center is uniform over `pooled`; each further center is drawn
/// with probability proportional to `min_c KL(candidate ‖ c)` over the
/// centers chosen so far. If every remaining candidate coincides with a
/// center the draw falls back to uniform over unchosen candidates.
pub fn init_kl_kmeanspp(pooled: &[ExpFamComponent], k: usize, seed: u64) -> Result<GlobalModel> {
    if k < 1 || k > pooled.len() {
        return Err(Error::Value(format!("k = {k} outside 1..={}", pooled.len())));
    }
    let mut rng = stream(seed, Purpose::FusionInit, 0);
    let n = pooled.len();
    let mut chosen = vec![false; n];
    let mut centers = Vec::with_capacity(k);
    let first = rng.random_range(0..n);
    chosen[first] = true;
    centers.push(first);
    let mut dist: Vec<f64> = vec![f64::INFINITY; n];
    while centers.len() < k {
        let newest = &pooled[*centers.last().unwrap()];
        for (i, c) in pooled.iter().enumerate() {
            dist[i] = if chosen[i] {
                0.0
            } else {
                dist[i].min(kl_divergence(c, newest)?.max(0.0))
            };
        }
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 && total.is_finite() {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, d) in dist.iter().enumerate() {
                if *d > 0.0 {
                    acc += d;
                    pick = Some(i);
                    if acc > target {
                        break;
                    }
                }
            }
            pick.expect("positive total implies a positive entry")
        } else {
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        centers.push(pick);
    }
    Ok(GlobalModel {
        components: centers.iter().map(|&i| pooled[i].clone()).collect(),
        usage: vec![0; k],
    })
}

/// Divides every entry by the population standard deviation of all entries
/// pooled across the matrices. A standard deviation below 1e-12 leaves the
/// matrices unchanged with scale 1.
pub fn normalize_costs(cost_matrices: &[CostMatrix]) -> Result<(Vec<CostMatrix>, f64)> {
    if cost_matrices.is_empty() {
        return Err(Error::Empty("no cost matrices".into()));
    }
    let scale = pooled_std(cost_matrices);
    if scale < 1e-12 {
        return Ok((cost_matrices.to_vec(), 1.0));
    }
    let scaled = cost_matrices
        .iter()
        .map(|c| c.scaled(1.0 / scale))
        .collect::<Result<Vec<_>>>()?;
    Ok((scaled, scale))
}

fn pooled_std(cost_matrices: &[CostMatrix]) -> f64 {
    let n: usize = cost_matrices.iter().map(|c| c.entries().len()).sum();
    if n == 0 {
        return 0.0;
    }
    let mean = cost_matrices.iter().flat_map(|c| c.entries()).sum::<f64>() / n as f64;
    let var = cost_matrices
        .iter()
        .flat_map(|c| c.entries())
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / n as f64;
    var.sqrt()
}

fn check_feasible(bundles: &[PosteriorBundle], n_globals: usize, assignments: &[AssignmentMatrix]) -> Result<()> {
    if bundles.len() != assignments.len() {
        return Err(Error::Consistency(format!(
            "{} assignments for {} bundles",
            assignments.len(),
            bundles.len()
        )));
    }
    for (b, a) in bundles.iter().zip(assignments) {
        if a.rows() != b.len() || a.cols() != n_globals {
            return Err(Error::Consistency(format!(
                "assignment for `{}` is {}x{}, expected {}x{}",
                b.id,
                a.rows(),
                a.cols(),
                b.len(),
                n_globals
            )));
        }
    }
    Ok(())
}

fn usage_from(assignments: &[AssignmentMatrix], n_globals: usize) -> Vec<usize> {
    let mut usage = vec![0; n_globals];
    for a in assignments {
        for &g in a.row_to_col() {
            usage[g] += 1;
        }
    }
    usage
}

/// `Σ_j Σ_{l,g} P^j_lg KL(θ̄_g ‖ θ^j_l) / scale + λ Σ_g √(Σ_j Σ_l (P^j_lg)²)`.
pub fn objective(
    bundles: &[PosteriorBundle],
    globals: &[ExpFamComponent],
    assignments: &[AssignmentMatrix],
    lambda: f64,
    scale: f64,
) -> Result<f64> {
    check_feasible(bundles, globals.len(), assignments)?;
    let mut kl_total = 0.0;
    for (b, a) in bundles.iter().zip(assignments) {
        for (l, &g) in a.row_to_col().iter().enumerate() {
            kl_total += kl_divergence(&globals[g], &b.components[l])? / scale;
        }
    }
    let reg: f64 = usage_from(assignments, globals.len())
        .iter()
        .map(|&n| (n as f64).sqrt())
        .sum();
    Ok(kl_total + lambda * reg)
}

/// Sets every global to the equal-weight barycenter of its assigned local
/// factors, visited in (dataset, row) order.
pub fn update_global_components(
    bundles: &[PosteriorBundle],
    assignments: &[AssignmentMatrix],
    n_globals: usize,
) -> Result<GlobalModel> {
    check_feasible(bundles, n_globals, assignments)?;
    let mut members: Vec<Vec<ExpFamComponent>> = vec![Vec::new(); n_globals];
    for (b, a) in bundles.iter().zip(assignments) {
        for (l, &g) in a.row_to_col().iter().enumerate() {
            members[g].push(b.components[l].clone());
        }
    }
    let usage = usage_from(assignments, n_globals);
    let components = members
        .iter()
        .enumerate()
        .map(|(g, m)| {
            if m.is_empty() {
                return Err(Error::Internal(format!("global component {g} has no members")));
            }
            barycenter(m, &Weights::uniform(m.len())?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GlobalModel { components, usage })
}

/// Drops globals no dataset uses and renumbers assignment columns, keeping
/// the relative order of the survivors.
pub fn prune_unused(globals: &GlobalModel, assignments: &[AssignmentMatrix]) -> Result<(GlobalModel, Vec<AssignmentMatrix>)> {
    let n = globals.len();
    let usage = usage_from(assignments, n);
    let mut remap = vec![usize::MAX; n];
    let mut kept = 0;
    for g in 0..n {
        if usage[g] > 0 {
            remap[g] = kept;
            kept += 1;
        }
    }
    let model = GlobalModel {
        components: (0..n).filter(|&g| usage[g] > 0).map(|g| globals.components[g].clone()).collect(),
        usage: usage.iter().copied().filter(|&u| u > 0).collect(),
    };
    let assignments = assignments
        .iter()
        .map(|a| AssignmentMatrix::new(a.row_to_col().iter().map(|&g| remap[g]).collect(), kept))
        .collect::<Result<Vec<_>>>()?;
    Ok((model, assignments))
}

/// Exact minimizer of the objective over one dataset's assignment with every
/// other dataset held fixed. Returns, per local row, either an existing
/// global index or `None` for a freshly opened global.
pub fn solve_block(
    bundle: &PosteriorBundle,
    globals: &[ExpFamComponent],
    usage_excluding: &[usize],
    lambda: f64,
    scale: f64,
) -> Result<Vec<Option<usize>>> {
    let base = build_cost_matrix(bundle, globals)?.scaled(1.0 / scale)?;
    let counts: Vec<i64> = usage_excluding.iter().map(|&u| u as i64).collect();
    let aug = build_augmented_cost_matrix(&base, &counts, lambda)?;
    let (a, _) = solve_rectangular_assignment(&aug)?;
    Ok(a.row_to_col().iter().map(|&c| (c < globals.len()).then_some(c)).collect())
}

fn solve_permutation(bundle: &PosteriorBundle, globals: &[ExpFamComponent]) -> Result<Vec<usize>> {
    let (a, _) = solve_rectangular_assignment(&build_cost_matrix(bundle, globals)?)?;
    Ok(a.row_to_col().to_vec())
}

/// Runs the alternation until the relative objective decrease drops below
/// `rel_tol`, the assignments stop changing, or `max_iters` is reached.
pub fn fuse(bundles: &[PosteriorBundle], config: &FusionConfig) -> Result<FusionResult> {
    config.validate()?;
    validate_bundles(bundles, config.mode)?;
    let k = bundles.iter().map(PosteriorBundle::len).max().unwrap_or(0);
    let init = match config.init {
        Init::KlKmeansPlusPlus => init_kl_kmeanspp(&canonical_pool(bundles), k, config.seed)?,
        Init::FirstDataset => {
            let first = &bundles[0].components;
            GlobalModel {
                components: first.clone(),
                usage: vec![0; first.len()],
            }
        }
    };
    let initial_costs = bundles
        .par_iter()
        .map(|b| build_cost_matrix(b, &init.components))
        .collect::<Result<Vec<_>>>()?;
    let (_, scale) = normalize_costs(&initial_costs)?;

    match config.mode {
        Mode::Homogeneous => fuse_homogeneous(bundles, config, init, scale),
        Mode::Heterogeneous => fuse_heterogeneous(bundles, config, init, scale),
    }
}

fn converged(trace: &[f64], rel_tol: f64) -> bool {
    match trace {
        [.., prev, cur] => (prev - cur) / prev.abs().max(f64::MIN_POSITIVE) < rel_tol,
        _ => false,
    }
}

fn fuse_homogeneous(bundles: &[PosteriorBundle], config: &FusionConfig, init: GlobalModel, scale: f64) -> Result<FusionResult> {
    let l = init.len();
    let mut globals = init;
    let mut assignments: Vec<AssignmentMatrix> = Vec::new();
    let mut trace = Vec::new();
    let mut iterations = 0;
    for _ in 0..config.max_iters {
        iterations += 1;
        // the permutation for each dataset depends only on the globals
        let perms: Vec<Vec<usize>> = match config.sweep {
            Sweep::Sequential => bundles
                .iter()
                .map(|b| solve_permutation(b, &globals.components))
                .collect::<Result<_>>()?,
            Sweep::ApproximateParallel => bundles
                .par_iter()
                .map(|b| solve_permutation(b, &globals.components))
                .collect::<Result<_>>()?,
        };
        let next = perms
            .into_iter()
            .map(|p| AssignmentMatrix::new(p, l))
            .collect::<Result<Vec<_>>>()?;
        let unchanged = next == assignments;
        assignments = next;
        globals = update_global_components(bundles, &assignments, l)?;
        trace.push(objective(bundles, &globals.components, &assignments, 0.0, scale)?);
        if unchanged || converged(&trace, config.rel_tol) {
            break;
        }
    }
    Ok(FusionResult {
        global_model: globals,
        assignments,
        objective_trace: trace,
        iterations,
        scale,
    })
}

fn fuse_heterogeneous(bundles: &[PosteriorBundle], config: &FusionConfig, init: GlobalModel, scale: f64) -> Result<FusionResult> {
    let lambda = config.lambda_base;
    let mut globals = init.components;
    // row -> global index, per dataset; empty until first visited
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); bundles.len()];
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut assignments = Vec::new();
    let mut model = GlobalModel {
        components: Vec::new(),
        usage: Vec::new(),
    };

    for _ in 0..config.max_iters {
        iterations += 1;
        let before = rows.clone();
        let n_before = globals.len();
        match config.sweep {
            Sweep::Sequential => {
                for (j, b) in bundles.iter().enumerate() {
                    let mut usage = vec![0usize; globals.len()];
                    for (jj, r) in rows.iter().enumerate() {
                        if jj != j {
                            r.iter().for_each(|&g| usage[g] += 1);
                        }
                    }
                    let picks = solve_block(b, &globals, &usage, lambda, scale)?;
                    rows[j] = open_new_globals(b, picks, &mut globals);
                }
            }
            Sweep::ApproximateParallel => {
                let mut usage = vec![0usize; globals.len()];
                rows.iter().flatten().for_each(|&g| usage[g] += 1);
                let picks = bundles
                    .par_iter()
                    .zip(rows.par_iter())
                    .map(|(b, r)| {
                        let mut own = usage.clone();
                        r.iter().for_each(|&g| own[g] -= 1);
                        solve_block(b, &globals, &own, lambda, scale)
                    })
                    .collect::<Result<Vec<_>>>()?;
                for (j, p) in picks.into_iter().enumerate() {
                    rows[j] = open_new_globals(&bundles[j], p, &mut globals);
                }
            }
        }
        let unchanged = rows == before && globals.len() == n_before;

        let current = rows
            .iter()
            .map(|r| AssignmentMatrix::new(r.clone(), globals.len()))
            .collect::<Result<Vec<_>>>()?;
        let (pruned, pruned_assignments) = prune_unused(
            &GlobalModel {
                usage: vec![0; globals.len()],
                components: std::mem::take(&mut globals),
            },
            &current,
        )?;
        model = update_global_components(bundles, &pruned_assignments, pruned.len())?;
        globals = model.components.clone();
        rows = pruned_assignments.iter().map(|a| a.row_to_col().to_vec()).collect();
        assignments = pruned_assignments;
        trace.push(objective(bundles, &globals, &assignments, lambda, scale)?);
        if unchanged || converged(&trace, config.rel_tol) {
            break;
        }
    }
    Ok(FusionResult {
        global_model: model,
        assignments,
        objective_trace: trace,
        iterations,
        scale,
    })
}

fn open_new_globals(bundle: &PosteriorBundle, picks: Vec<Option<usize>>, globals: &mut Vec<ExpFamComponent>) -> Vec<usize> {
    picks
        .into_iter()
        .enumerate()
        .map(|(l, pick)| {
            pick.unwrap_or_else(|| {
                globals.push(bundle.components[l].clone());
                globals.len() - 1
            })
        })
        .collect()
}
