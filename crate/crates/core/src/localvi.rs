//! Coordinate-ascent variational inference for a Bayesian Gaussian mixture.
//!
//! The variational family is `q(π) Π_k q(μ_k, Λ_k)` with a Dirichlet factor
//! for the weights and Normal–Wishart factors for the components. One sweep
//! is an M-step (closed-form factor updates from weighted sufficient
//! statistics) followed by an E-step (responsibilities from expected
//! log-densities); both are exact coordinate maximizations of the ELBO.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::expfam::{ExpFamComponent, NormalWishart, PosteriorBundle};
use crate::linalg::{cholesky, ln_det_from_cholesky, symmetrize, trace_of_product_sym};
use crate::rng::{stream, Purpose};
use crate::special::{digamma, ln_gamma, ln_multigamma, multidigamma};
use crate::{Error, Result};

/// Components with fewer effective points than this are not exported.
pub const WEIGHT_FLOOR: f64 = 1.0;
pub const DEFAULT_MAX_ITERS: usize = 1000;
pub const DEFAULT_TOL: f64 = 1e-8;
const LLOYD_ITERS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct GmmPrior {
    pub mean: DVector<f64>,
    pub kappa: f64,
    pub scale: DMatrix<f64>,
    pub dof: f64,
    /// Symmetric Dirichlet concentration.
    pub alpha: f64,
}

impl GmmPrior {
    /// Weakly informative defaults: `m₀` is the data mean, `κ₀ = 1`,
    /// `ν₀ = D + 2`, `W₀` chosen so `E[Λ] = ν₀W₀` is the inverse data covariance,
    /// and `α₀ = 1/K`.
    pub fn default_for(data: &DMatrix<f64>, k: usize) -> Result<Self> {
        check_data(data)?;
        if k < 1 {
            return Err(Error::Value("K must be at least 1".into()));
        }
        let (n, d) = data.shape();
        let mean = data.row_mean().transpose();
        let mut cov = DMatrix::zeros(d, d);
        for row in data.row_iter() {
            let c = row.transpose() - &mean;
            cov += &c * c.transpose();
        }
        cov /= n as f64;
        let ridge = (cov.trace() / d as f64).max(0.0) * 1e-6;
        let cov = if cov.trace() > 0.0 {
            cov + DMatrix::identity(d, d) * ridge
        } else {
            DMatrix::identity(d, d)
        };
        let dof = d as f64 + 2.0;
        let scale = cholesky(&(cov * dof))
            .ok_or_else(|| Error::domain("data", "covariance is not positive definite"))?
            .inverse();
        Ok(Self {
            mean,
            kappa: 1.0,
            scale: symmetrize(&scale),
            dof,
            alpha: 1.0 / k as f64,
        })
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.mean.len() != dim || self.scale.shape() != (dim, dim) {
            return Err(Error::Shape(format!("prior does not match data dimension {dim}")));
        }
        if !(self.kappa > 0.0) || !(self.alpha > 0.0) {
            return Err(Error::domain("prior", "kappa and alpha must be positive"));
        }
        if !(self.dof > dim as f64 - 1.0) {
            return Err(Error::domain("prior.dof", format!("{} must exceed D - 1", self.dof)));
        }
        if cholesky(&self.scale).is_none() {
            return Err(Error::domain("prior.scale", "not positive definite"));
        }
        Ok(())
    }
}

/// Variational parameters together with the responsibilities.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmState {
    pub alpha: Vec<f64>,
    pub kappa: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub scales: Vec<DMatrix<f64>>,
    pub dofs: Vec<f64>,
    /// `n × K`, rows sum to one.
    pub responsibilities: DMatrix<f64>,
}

impl GmmState {
    pub fn n_components(&self) -> usize {
        self.alpha.len()
    }

    /// Effective number of points per component, `Σ_i r_ik`.
    pub fn effective_counts(&self) -> Vec<f64> {
        self.responsibilities.column_iter().map(|c| c.sum()).collect()
    }

    /// Reorders every per-component quantity; `perm[new] = old`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut responsibilities = self.responsibilities.clone();
        for (new, &old) in perm.iter().enumerate() {
            responsibilities.set_column(new, &self.responsibilities.column(old));
        }
        Self {
            alpha: perm.iter().map(|&k| self.alpha[k]).collect(),
            kappa: perm.iter().map(|&k| self.kappa[k]).collect(),
            means: perm.iter().map(|&k| self.means[k].clone()).collect(),
            scales: perm.iter().map(|&k| self.scales[k].clone()).collect(),
            dofs: perm.iter().map(|&k| self.dofs[k]).collect(),
            responsibilities,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VIResult {
    pub state: GmmState,
    /// ELBO after each sweep of the first run, then one entry per accepted delete move.
    pub elbo_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl VIResult {
    /// Components with effective weight at least `floor`, with their expected
    /// mixture weights renormalized over the exported set.
    pub fn export(&self, floor: f64) -> Result<(Vec<NormalWishart>, Vec<f64>)> {
        let counts = self.state.effective_counts();
        let keep: Vec<usize> = (0..counts.len()).filter(|&k| counts[k] >= floor).collect();
        if keep.is_empty() {
            return Err(Error::Empty(format!("no component has effective weight >= {floor}")));
        }
        let s = &self.state;
        let components = keep
            .iter()
            .map(|&k| NormalWishart::new(s.means[k].clone(), s.kappa[k], s.scales[k].clone(), s.dofs[k]))
            .collect::<Result<Vec<_>>>()?;
        let total: f64 = keep.iter().map(|&k| s.alpha[k]).sum();
        Ok((components, keep.iter().map(|&k| s.alpha[k] / total).collect()))
    }

    pub fn to_bundle(&self, id: impl Into<String>) -> Result<PosteriorBundle> {
        let (components, weights) = self.export(WEIGHT_FLOOR)?;
        Ok(PosteriorBundle {
            id: id.into(),
            components: components.into_iter().map(ExpFamComponent::from).collect(),
            weights: Some(weights),
        })
    }
}

fn check_data(data: &DMatrix<f64>) -> Result<()> {
    if data.nrows() == 0 || data.ncols() == 0 {
        return Err(Error::Empty("data has no rows or no columns".into()));
    }
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        let (r, c) = (i % data.nrows(), i / data.nrows());
        return Err(Error::domain(format!("data[{r}][{c}]"), "non-finite value"));
    }
    Ok(())
}

/// Per-component expectations shared by the E-step and the ELBO.
struct Expectations {
    ln_pi: Vec<f64>,
    ln_det: Vec<f64>,
    /// Lower Cholesky factors of `W_k`.
    w_chol: Vec<DMatrix<f64>>,
    ln_det_w: Vec<f64>,
}

fn expectations(state: &GmmState) -> Result<Expectations> {
    let d = state.means.first().map_or(0, |m| m.len());
    let alpha_sum: f64 = state.alpha.iter().sum();
    let psi_sum = digamma(alpha_sum);
    let mut ln_det = Vec::new();
    let mut w_chol = Vec::new();
    let mut ln_det_w = Vec::new();
    for k in 0..state.n_components() {
        let ch = cholesky(&state.scales[k])
            .ok_or_else(|| Error::Internal(format!("scale matrix {k} lost positive definiteness")))?;
        let ldw = ln_det_from_cholesky(&ch);
        ln_det.push(multidigamma(state.dofs[k] / 2.0, d) + d as f64 * 2f64.ln() + ldw);
        ln_det_w.push(ldw);
        w_chol.push(ch.l());
    }
    Ok(Expectations {
        ln_pi: state.alpha.iter().map(|&a| digamma(a) - psi_sum).collect(),
        ln_det,
        w_chol,
        ln_det_w,
    })
}

/// `n × K` matrix of `ν_k (x_i − m_k)ᵀ W_k (x_i − m_k)`.
fn quadratic_terms(data: &DMatrix<f64>, state: &GmmState, ex: &Expectations) -> DMatrix<f64> {
    let (n, _) = data.shape();
    let k = state.n_components();
    let mut out = DMatrix::zeros(n, k);
    for c in 0..k {
        let mut diff = data.clone();
        for mut row in diff.row_iter_mut() {
            row -= state.means[c].transpose();
        }
        let y = diff * &ex.w_chol[c];
        for (i, row) in y.row_iter().enumerate() {
            out[(i, c)] = state.dofs[c] * row.norm_squared();
        }
    }
    out
}

fn ln_wishart_norm(ln_det_w: f64, dof: f64, d: usize) -> f64 {
    -0.5 * dof * ln_det_w - (0.5 * dof * d as f64 * 2f64.ln() + ln_multigamma(dof / 2.0, d))
}

fn ln_dirichlet_norm(alpha: &[f64]) -> f64 {
    ln_gamma(alpha.iter().sum()) - alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>()
}

/// Evidence lower bound of `state` under `prior`, including all constants.
pub fn elbo(data: &DMatrix<f64>, prior: &GmmPrior, state: &GmmState) -> Result<f64> {
    let (_, d) = data.shape();
    let df = d as f64;
    let kk = state.n_components();
    let ex = expectations(state)?;
    let quad = quadratic_terms(data, state, &ex);
    let r = &state.responsibilities;
    let ln2pi = (2.0 * PI).ln();
    let prior_chol = cholesky(&prior.scale).ok_or_else(|| Error::domain("prior.scale", "not positive definite"))?;
    let prior_scale_inv = prior_chol.inverse();
    let prior_ln_det_w = ln_det_from_cholesky(&prior_chol);

    let mut value = 0.0;
    for k in 0..kk {
        let per_point = ex.ln_det[k] - df / state.kappa[k] - df * ln2pi;
        for i in 0..data.nrows() {
            let rik = r[(i, k)];
            if rik > 0.0 {
                // likelihood, assignment prior and assignment entropy
                value += rik * (0.5 * (per_point - quad[(i, k)]) + ex.ln_pi[k] - rik.ln());
            }
        }
    }

    value += ln_dirichlet_norm(&vec![prior.alpha; kk]) + (prior.alpha - 1.0) * ex.ln_pi.iter().sum::<f64>();
    value -= ln_dirichlet_norm(&state.alpha)
        + state.alpha.iter().zip(&ex.ln_pi).map(|(a, l)| (a - 1.0) * l).sum::<f64>();

    for k in 0..kk {
        let dm = &state.means[k] - &prior.mean;
        let w = &state.scales[k];
        let nu = state.dofs[k];
        // E[ln p(μ_k, Λ_k)]
        value += 0.5
            * (df * (prior.kappa / (2.0 * PI)).ln() + ex.ln_det[k]
                - df * prior.kappa / state.kappa[k]
                - prior.kappa * nu * (dm.transpose() * w * &dm)[(0, 0)]);
        value += ln_wishart_norm(prior_ln_det_w, prior.dof, d) + 0.5 * (prior.dof - df - 1.0) * ex.ln_det[k]
            - 0.5 * nu * trace_of_product_sym(&prior_scale_inv, w);
        // −E[ln q(μ_k, Λ_k)]
        let entropy_w = -ln_wishart_norm(ex.ln_det_w[k], nu, d) - 0.5 * (nu - df - 1.0) * ex.ln_det[k] + 0.5 * nu * df;
        value -= 0.5 * ex.ln_det[k] + 0.5 * df * (state.kappa[k] / (2.0 * PI)).ln() - 0.5 * df - entropy_w;
    }
    Ok(value)
}

fn m_step(data: &DMatrix<f64>, prior: &GmmPrior, r: &DMatrix<f64>) -> Result<GmmState> {
    let (_, d) = data.shape();
    let kk = r.ncols();
    let prior_scale_inv = cholesky(&prior.scale)
        .ok_or_else(|| Error::domain("prior.scale", "not positive definite"))?
        .inverse();
    let mut state = GmmState {
        alpha: Vec::with_capacity(kk),
        kappa: Vec::with_capacity(kk),
        means: Vec::with_capacity(kk),
        scales: Vec::with_capacity(kk),
        dofs: Vec::with_capacity(kk),
        responsibilities: r.clone(),
    };
    for k in 0..kk {
        let col = r.column(k);
        let nk: f64 = col.sum();
        let mut scale_inv = prior_scale_inv.clone();
        let mean = if nk > 0.0 {
            let xbar = data.tr_mul(&col) / nk;
            let mut scatter = DMatrix::zeros(d, d);
            for (i, row) in data.row_iter().enumerate() {
                if col[i] > 0.0 {
                    let c = row.transpose() - &xbar;
                    scatter += (&c * c.transpose()) * col[i];
                }
            }
            let dm = &xbar - &prior.mean;
            scale_inv += scatter + (&dm * dm.transpose()) * (prior.kappa * nk / (prior.kappa + nk));
            (&prior.mean * prior.kappa + &xbar * nk) / (prior.kappa + nk)
        } else {
            prior.mean.clone()
        };
        let scale = cholesky(&symmetrize(&scale_inv))
            .ok_or_else(|| Error::Internal(format!("scale update {k} is not positive definite")))?
            .inverse();
        state.alpha.push(prior.alpha + nk);
        state.kappa.push(prior.kappa + nk);
        state.means.push(mean);
        state.scales.push(symmetrize(&scale));
        state.dofs.push(prior.dof + nk);
    }
    Ok(state)
}

fn e_step(data: &DMatrix<f64>, state: &GmmState) -> Result<DMatrix<f64>> {
    e_step_excluding(data, state, None)
}

/// E-step with component `excluded` (if any) given zero responsibility.
fn e_step_excluding(data: &DMatrix<f64>, state: &GmmState, excluded: Option<usize>) -> Result<DMatrix<f64>> {
    let d = data.ncols() as f64;
    let ex = expectations(state)?;
    let quad = quadratic_terms(data, state, &ex);
    let kk = state.n_components();
    let mut r = DMatrix::zeros(data.nrows(), kk);
    for i in 0..data.nrows() {
        let logits: Vec<f64> = (0..kk)
            .map(|k| {
                if Some(k) == excluded {
                    f64::NEG_INFINITY
                } else {
                    ex.ln_pi[k] + 0.5 * (ex.ln_det[k] - d / state.kappa[k] - quad[(i, k)])
                }
            })
            .collect();
        let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = logits.iter().map(|l| (l - top).exp()).sum();
        for k in 0..kk {
            r[(i, k)] = (logits[k] - top).exp() / total;
        }
    }
    Ok(r)
}

/// Hard initial responsibilities from k-means++ seeding and a few Lloyd steps.
fn initial_responsibilities(data: &DMatrix<f64>, k: usize, seed: u64) -> DMatrix<f64> {
    let n = data.nrows();
    let mut rng = stream(seed, Purpose::VariationalInit, 0);
    let rows: Vec<DVector<f64>> = data.row_iter().map(|r| r.transpose()).collect();
    let mut centers = vec![rows[rng.random_range(0..n)].clone()];
    let mut nearest: Vec<f64> = rows.iter().map(|x| (x - &centers[0]).norm_squared()).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, w) in nearest.iter().enumerate() {
                if u < *w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centers.push(rows[pick].clone());
        for (i, x) in rows.iter().enumerate() {
            nearest[i] = nearest[i].min((x - &rows[pick]).norm_squared());
        }
    }
    let assign = |centers: &[DVector<f64>]| -> Vec<usize> {
        rows.iter()
            .map(|x| {
                (0..centers.len())
                    .min_by(|&a, &b| (x - &centers[a]).norm_squared().total_cmp(&(x - &centers[b]).norm_squared()))
                    .unwrap_or(0)
            })
            .collect()
    };
    let mut labels = assign(&centers);
    for _ in 0..LLOYD_ITERS {
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&DVector<f64>> = rows.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(x, _)| x).collect();
            if !members.is_empty() {
                *center = members.iter().fold(DVector::zeros(data.ncols()), |acc, x| acc + *x) / members.len() as f64;
            }
        }
        let next = assign(&centers);
        if next == labels {
            break;
        }
        labels = next;
    }
    let mut r = DMatrix::zeros(n, k);
    for (i, &l) in labels.iter().enumerate() {
        r[(i, l)] = 1.0;
    }
    r
}

pub fn fit_bayesian_gmm(
    data: &DMatrix<f64>,
    k: usize,
    prior: &GmmPrior,
    max_iters: usize,
    tol: f64,
    seed: u64,
) -> Result<VIResult> {
    check_data(data)?;
    if k < 1 {
        return Err(Error::Value("K must be at least 1".into()));
    }
    if k > data.nrows() {
        return Err(Error::Value(format!("K = {k} exceeds the number of points {}", data.nrows())));
    }
    if max_iters < 1 {
        return Err(Error::Config("max_iters must be at least 1".into()));
    }
    prior.validate(data.ncols())?;

    let r = initial_responsibilities(data, k, seed);
    let mut best = run_cavi(data, prior, r, max_iters, tol)?;
    let mut iterations = best.elbo_trace.len();

    // Delete moves: CAVI from a k-means start can settle with one cluster split
    // across two components. Removing a component and re-converging is kept
    // only when it raises the ELBO, so the trace stays nondecreasing.
    'outer: loop {
        let counts = best.state.effective_counts();
        let mut alive: Vec<usize> = (0..k).filter(|&c| counts[c] >= WEIGHT_FLOOR).collect();
        if alive.len() < 2 {
            break;
        }
        alive.sort_by(|&a, &b| counts[a].total_cmp(&counts[b]));
        let current = *best.elbo_trace.last().unwrap_or(&f64::NEG_INFINITY);
        for c in alive {
            let r = e_step_excluding(data, &best.state, Some(c))?;
            let candidate = run_cavi(data, prior, r, max_iters, tol)?;
            iterations += candidate.elbo_trace.len();
            let value = *candidate.elbo_trace.last().unwrap_or(&f64::NEG_INFINITY);
            if value > current {
                best.elbo_trace.push(value);
                best.state = candidate.state;
                best.converged = candidate.converged;
                continue 'outer;
            }
        }
        break;
    }
    best.iterations = iterations;
    Ok(best)
}

fn run_cavi(data: &DMatrix<f64>, prior: &GmmPrior, mut r: DMatrix<f64>, max_iters: usize, tol: f64) -> Result<VIResult> {
    let mut trace = Vec::new();
    let mut converged = false;
    let mut state = m_step(data, prior, &r)?;
    for it in 0..max_iters {
        if it > 0 {
            state = m_step(data, prior, &r)?;
        }
        let value = elbo(data, prior, &state)?;
        let done = trace
            .last()
            .is_some_and(|&prev: &f64| (value - prev).abs() <= tol * prev.abs().max(1.0));
        trace.push(value);
        if done {
            converged = true;
            break;
        }
        r = e_step(data, &state)?;
        state.responsibilities = r.clone();
    }
    Ok(VIResult {
        iterations: trace.len(),
        state,
        elbo_trace: trace,
        converged,
    })
}
