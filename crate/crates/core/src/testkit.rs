//! Random valid parameters for property tests and the acceptance suite.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::assignment::CostMatrix;
use crate::expfam::{kl_divergence, DiagGaussian, Dirichlet, ExpFamComponent, Family, NormalWishart, PosteriorBundle};
use crate::linalg::{random_orthogonal, symmetrize};

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn random_spd<R: Rng + ?Sized>(rng: &mut R, dim: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let q = random_orthogonal(rng, dim);
    let d = DMatrix::from_diagonal(&DVector::from_iterator(dim, (0..dim).map(|_| rng.random_range(lo..hi))));
    symmetrize(&(&q * d * q.transpose()))
}

pub fn random_component<R: Rng + ?Sized>(rng: &mut R, family: Family, dim: usize) -> ExpFamComponent {
    match family {
        Family::DiagGaussian => {
            let mean = (0..dim).map(|_| 1.5 * normal(rng)).collect();
            let var = (0..dim).map(|_| rng.random_range(-1.0f64..1.0).exp()).collect();
            DiagGaussian::new(mean, var).unwrap().into()
        }
        Family::Dirichlet => {
            let alpha = (0..dim).map(|_| rng.random_range(0.5..5.0)).collect();
            Dirichlet::new(alpha).unwrap().into()
        }
        Family::NormalWishart => {
            let mean = DVector::from_iterator(dim, (0..dim).map(|_| normal(rng)));
            let kappa = rng.random_range(0.5..5.0);
            let dof = dim as f64 + rng.random_range(1.0..8.0);
            let scale = random_spd(rng, dim, 0.5, 2.0) / dof;
            NormalWishart::new(mean, kappa, scale, dof).unwrap().into()
        }
    }
}

/// A valid random perturbation of relative size `rel`: unconstrained
/// coordinates move by `rel·(|x| + 1)·z`, positive scalars are multiplied
/// by `exp(rel·z)` and scale matrices by a congruence `L(I + rel·S)Lᵀ`.
pub fn perturb<R: Rng + ?Sized>(rng: &mut R, c: &ExpFamComponent, rel: f64) -> ExpFamComponent {
    let shift = |x: f64, rng: &mut R| x + rel * (x.abs() + 1.0) * normal(rng);
    let scale = |x: f64, rng: &mut R| x * (rel * normal(rng)).exp();
    match c {
        ExpFamComponent::DiagGaussian(g) => {
            let mean = g.mean().iter().map(|&m| shift(m, rng)).collect();
            let var = g.variance().iter().map(|&v| scale(v, rng)).collect();
            DiagGaussian::new(mean, var).unwrap().into()
        }
        ExpFamComponent::Dirichlet(d) => {
            let alpha = d.alpha().iter().map(|&a| scale(a, rng)).collect();
            Dirichlet::new(alpha).unwrap().into()
        }
        ExpFamComponent::NormalWishart(nw) => {
            let d = nw.dim();
            loop {
                let mean = nw.mean().map(|m| shift(m, rng));
                let kappa = scale(nw.kappa(), rng);
                let dof = scale(nw.dof(), rng);
                let z = DMatrix::from_fn(d, d, |_, _| normal(rng));
                let s = DMatrix::identity(d, d) + symmetrize(&z) * rel;
                let l = nw.scale().clone().cholesky().unwrap().l();
                let w = symmetrize(&(&l * s * l.transpose()));
                if let Ok(p) = NormalWishart::new(mean, kappa, w, dof) {
                    return p.into();
                }
            }
        }
    }
}

/// Datasets whose factors are noisy copies of a random subset of shared
/// centers, listed in random order.
pub fn clustered_bundles<R: Rng + ?Sized>(
    rng: &mut R,
    family: Family,
    dim: usize,
    n_datasets: usize,
    max_local: usize,
    n_centers: usize,
    spread: f64,
) -> (Vec<ExpFamComponent>, Vec<PosteriorBundle>) {
    use rand::seq::SliceRandom;
    let centers: Vec<_> = (0..n_centers).map(|_| random_component(rng, family, dim)).collect();
    let bundles = (0..n_datasets)
        .map(|j| {
            let mut idx: Vec<usize> = (0..n_centers).collect();
            idx.shuffle(rng);
            let take = rng.random_range(1..=max_local.min(n_centers));
            let comps = idx[..take]
                .iter()
                .map(|&g| if spread > 0.0 { perturb(rng, &centers[g], spread) } else { centers[g].clone() })
                .collect();
            PosteriorBundle::new(format!("d{j}"), comps)
        })
        .collect();
    (centers, bundles)
}

/// Value of the fusion objective's terms that depend on one dataset's block:
/// `Σ_l cost(l, g_l) + λ Σ_g √(usage_g + x_g) + λ · (number of fresh globals)`
/// where `x_g` marks globals this dataset uses. `choice[l] = None` opens a
/// fresh global at local `l`.
pub fn block_objective(costs: &CostMatrix, usage_excluding: &[usize], lambda: f64, choice: &[Option<usize>]) -> f64 {
    let mut used = vec![0usize; costs.cols()];
    let mut total = 0.0;
    let mut fresh = 0usize;
    for (l, c) in choice.iter().enumerate() {
        match c {
            Some(g) => {
                used[*g] += 1;
                total += costs.get(l, *g);
            }
            None => fresh += 1,
        }
    }
    let reg: f64 = usage_excluding
        .iter()
        .zip(&used)
        .map(|(&u, &x)| ((u + x) as f64).sqrt())
        .sum();
    total + lambda * (reg + fresh as f64)
}

/// Exhaustive minimum of [`block_objective`] over every feasible binary
/// block: each local maps to a distinct existing global or to its own fresh one.
pub fn enumerate_block_minimum(costs: &CostMatrix, usage_excluding: &[usize], lambda: f64) -> f64 {
    fn go(
        costs: &CostMatrix,
        usage: &[usize],
        lambda: f64,
        l: usize,
        taken: &mut Vec<bool>,
        choice: &mut Vec<Option<usize>>,
        best: &mut f64,
    ) {
        if l == costs.rows() {
            *best = best.min(block_objective(costs, usage, lambda, choice));
            return;
        }
        choice.push(None);
        go(costs, usage, lambda, l + 1, taken, choice, best);
        choice.pop();
        for g in 0..costs.cols() {
            if !taken[g] {
                taken[g] = true;
                choice.push(Some(g));
                go(costs, usage, lambda, l + 1, taken, choice, best);
                choice.pop();
                taken[g] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(costs, usage_excluding, lambda, 0, &mut vec![false; costs.cols()], &mut Vec::new(), &mut best);
    best
}

/// Greedy one-to-one matching of two component lists by KL; returns the
/// largest matched divergence, or `None` if the lengths differ.
pub fn match_components(a: &[ExpFamComponent], b: &[ExpFamComponent]) -> Option<f64> {
    if a.len() != b.len() {
        return None;
    }
    let mut taken = vec![false; b.len()];
    let mut worst: f64 = 0.0;
    for x in a {
        let (j, d) = b
            .iter()
            .enumerate()
            .filter(|(j, _)| !taken[*j])
            .map(|(j, y)| (j, kl_divergence(x, y).unwrap().abs()))
            .min_by(|p, q| p.1.total_cmp(&q.1))?;
        taken[j] = true;
        worst = worst.max(d);
    }
    Some(worst)
}

/// Distance from `v` to the hull of at most three points by grid search over
/// simplex weights, refined by repeatedly zooming around the best cell.
pub fn grid_hull_distance(v: &DVector<f64>, hull: &crate::metrics::PointSet) -> f64 {
    let p = hull.points();
    assert!(p.len() <= 3, "grid oracle handles at most three points");
    let eval = |a: f64, b: f64| -> f64 {
        let x = match p.len() {
            1 => p[0].clone(),
            2 => &p[0] * (1.0 - a) + &p[1] * a,
            _ => &p[0] * (1.0 - a - b) + &p[1] * a + &p[2] * b,
        };
        (x - v).norm()
    };
    let b_steps = usize::from(p.len() == 3);
    let (mut ca, mut cb, mut half) = (0.5, 0.5, 0.5);
    let mut best = f64::INFINITY;
    let n = 200;
    while half > 1e-10 {
        let step = 2.0 * half / n as f64;
        let (mut ba, mut bb) = (ca, cb);
        for i in 0..=n {
            let a = (ca - half + i as f64 * step).clamp(0.0, 1.0);
            for j in 0..=n * b_steps {
                let b = if b_steps == 0 { 0.0 } else { (cb - half + j as f64 * step).clamp(0.0, 1.0) };
                if a + b > 1.0 {
                    continue;
                }
                let d = eval(a, b);
                if d < best {
                    best = d;
                    ba = a;
                    bb = b;
                }
            }
        }
        ca = ba;
        cb = bb;
        half = 4.0 * step;
    }
    best
}
