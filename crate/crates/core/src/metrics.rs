//! Fused-model evaluation against a ground truth.
//!
//! The main metric is the Hausdorff distance between the convex hulls of two
//! mean sets. The farthest point of one polytope from another convex set is a
//! vertex, so only vertex-to-hull distances are needed; each one is a
//! projection onto a simplex-weighted combination, solved by away-step
//! Frank–Wolfe.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

pub const HULL_TOLERANCE: f64 = 1e-8;
pub const HULL_MAX_ITERS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    points: Vec<DVector<f64>>,
}

impl PointSet {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_vectors(points.into_iter().map(DVector::from_vec).collect())
    }

    pub fn from_vectors(points: Vec<DVector<f64>>) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(Error::Empty("point set has no points".into()));
        };
        let d = first.len();
        if d == 0 {
            return Err(Error::Shape("points have dimension 0".into()));
        }
        for (i, p) in points.iter().enumerate() {
            if p.len() != d {
                return Err(Error::Shape(format!("point {i} has dimension {} instead of {d}", p.len())));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::domain(format!("points[{i}]"), "non-finite coordinate"));
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("dimension mismatch: {a} vs {b}")));
    }
    Ok(())
}

/// Euclidean distance from `v` to the convex hull of `hull`.
///
/// Fully corrective Frank–Wolfe: each major step adds the Frank–Wolfe vertex
/// to the active set, and minor steps re-minimize over the active set exactly
/// through its affine hull. Stops once the Frank–Wolfe gap of
/// `‖v − Σ α_i p_i‖²`, divided by the current distance, is at most 1e-8; that
/// quotient bounds the excess distance.
pub fn point_to_hull_distance(v: &DVector<f64>, hull: &PointSet) -> Result<f64> {
    check_dims(v.len(), hull.dim())?;
    let q: Vec<DVector<f64>> = hull.points().iter().map(|p| p - v).collect();
    let n = q.len();
    let start = (0..n)
        .min_by(|&a, &b| q[a].norm_squared().total_cmp(&q[b].norm_squared()))
        .unwrap_or(0);
    // active vertices with their (positive) weights
    let mut active: Vec<(usize, f64)> = vec![(start, 1.0)];
    let mut x = q[start].clone();
    let mut steps = 0;

    'major: while steps < HULL_MAX_ITERS {
        steps += 1;
        let dist = x.norm();
        if dist <= HULL_TOLERANCE {
            break;
        }
        let xx = x.dot(&x);
        let j = (0..n).min_by(|&a, &b| x.dot(&q[a]).total_cmp(&x.dot(&q[b]))).unwrap_or(0);
        let gap = 2.0 * (xx - x.dot(&q[j]));
        if gap <= HULL_TOLERANCE * dist || active.iter().any(|&(i, _)| i == j) {
            break;
        }
        active.push((j, 0.0));
        loop {
            steps += 1;
            let Some(mu) = affine_min_norm(&q, &active) else {
                active.pop();
                break 'major;
            };
            if mu.iter().all(|&m| m > 0.0) {
                for (slot, m) in active.iter_mut().zip(&mu) {
                    slot.1 = *m;
                }
                x = combine(&q, &active, v.len());
                break;
            }
            // Move toward the affine minimizer until a weight hits zero.
            let theta = active
                .iter()
                .zip(&mu)
                .filter(|(_, &m)| m <= 0.0)
                .map(|(&(_, l), &m)| l / (l - m))
                .fold(1.0, f64::min);
            for (slot, m) in active.iter_mut().zip(&mu) {
                slot.1 += theta * (m - slot.1);
            }
            let drop = active
                .iter()
                .enumerate()
                .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
                .map(|(k, _)| k)
                .unwrap_or(0);
            active.remove(drop);
            active.retain(|&(_, w)| w > 0.0);
            let total: f64 = active.iter().map(|&(_, w)| w).sum();
            for slot in active.iter_mut() {
                slot.1 /= total;
            }
            x = combine(&q, &active, v.len());
            if steps >= HULL_MAX_ITERS {
                break 'major;
            }
        }
    }
    Ok(x.norm())
}

fn combine(q: &[DVector<f64>], active: &[(usize, f64)], d: usize) -> DVector<f64> {
    active.iter().fold(DVector::zeros(d), |acc, &(i, w)| acc + &q[i] * w)
}

/// Weights of the minimum-norm point of the affine hull of the active vertices.
fn affine_min_norm(q: &[DVector<f64>], active: &[(usize, f64)]) -> Option<Vec<f64>> {
    let m = active.len();
    let mut lhs = DMatrix::zeros(m + 1, m + 1);
    let mut rhs = DVector::zeros(m + 1);
    for (a, &(i, _)) in active.iter().enumerate() {
        for (b, &(j, _)) in active.iter().enumerate() {
            lhs[(a, b)] = q[i].dot(&q[j]);
        }
        lhs[(a, m)] = 1.0;
        lhs[(m, a)] = 1.0;
    }
    rhs[m] = 1.0;
    let sol = lhs.lu().solve(&rhs)?;
    let mu: Vec<f64> = sol.iter().take(m).copied().collect();
    mu.iter().all(|w| w.is_finite()).then_some(mu)
}

/// Hausdorff distance between the convex hulls of `a` and `b`.
pub fn polytope_hausdorff(a: &PointSet, b: &PointSet) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    let mut worst: f64 = 0.0;
    for v in a.points() {
        worst = worst.max(point_to_hull_distance(v, b)?);
    }
    for w in b.points() {
        worst = worst.max(point_to_hull_distance(w, a)?);
    }
    Ok(worst)
}

/// Hausdorff distance between the finite point sets themselves. Diagnostic
/// only; the evaluation metric is [`polytope_hausdorff`].
pub fn point_set_hausdorff(a: &PointSet, b: &PointSet) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    let directed = |x: &PointSet, y: &PointSet| {
        x.points()
            .iter()
            .map(|p| y.points().iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    Ok(directed(a, b).max(directed(b, a)))
}

pub fn size_estimation_error(estimated: usize, truth: usize) -> usize {
    estimated.abs_diff(truth)
}
