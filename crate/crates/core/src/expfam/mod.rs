//! Exponential-family parameter algebra.
//!
//! Three families are supported: diagonal Gaussians, Dirichlets and
//! Normal–Wisharts. For each one the module converts between standard and
//! natural parameters, evaluates KL divergences in closed form and computes
//! weighted KL barycenters. Within an exponential family the minimizer of
//! `Σ_i λ_i KL(q ‖ q_i)` has natural parameter `Σ_i λ_i η_i`, so a barycenter
//! is an average in natural coordinates mapped back to standard ones.

mod diag_gaussian;
mod dirichlet;
mod normal_wishart;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use diag_gaussian::DiagGaussian;
pub use dirichlet::Dirichlet;
pub use normal_wishart::NormalWishart;

use crate::rng::{stream, Purpose};
use crate::{Error, Result};

pub const VARIANCE_FLOOR: f64 = 1e-12;
pub const ALPHA_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    DiagGaussian,
    Dirichlet,
    NormalWishart,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::DiagGaussian, Family::Dirichlet, Family::NormalWishart];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::DiagGaussian => "diag_gaussian",
            Family::Dirichlet => "dirichlet",
            Family::NormalWishart => "normal_wishart",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One mean-field factor `q(z | θ)`.
#[derive(Debug, Clone, PartialEq)]
pub enum ExpFamComponent {
    DiagGaussian(DiagGaussian),
    Dirichlet(Dirichlet),
    NormalWishart(NormalWishart),
}

impl From<DiagGaussian> for ExpFamComponent {
    fn from(c: DiagGaussian) -> Self {
        ExpFamComponent::DiagGaussian(c)
    }
}

impl From<Dirichlet> for ExpFamComponent {
    fn from(c: Dirichlet) -> Self {
        ExpFamComponent::Dirichlet(c)
    }
}

impl From<NormalWishart> for ExpFamComponent {
    fn from(c: NormalWishart) -> Self {
        ExpFamComponent::NormalWishart(c)
    }
}

/// Natural parameters in the flat layout documented on each family type.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalParams {
    pub family: Family,
    pub dim: usize,
    pub eta: Vec<f64>,
}

/// Convex combination weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights(Vec<f64>);

impl Weights {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("weights".into()));
        }
        if let Some((i, w)) = values.iter().enumerate().find(|(_, w)| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::domain(format!("weights[{i}]"), format!("{w} is not a finite nonnegative number")));
        }
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::domain("weights", format!("sum to {total}, expected 1")));
        }
        Ok(Self(values))
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Empty("weights".into()));
        }
        Ok(Self(vec![1.0 / n as f64; n]))
    }

    /// Rescales nonnegative values to sum to one.
    pub fn normalized(values: &[f64]) -> Result<Self> {
        let total: f64 = values.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::domain("weights", "total mass must be finite and positive"));
        }
        Self::new(values.iter().map(|v| v / total).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// One dataset's mean-field posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorBundle {
    pub id: String,
    pub components: Vec<ExpFamComponent>,
    /// Optional mixture weights exported alongside the factors.
    pub weights: Option<Vec<f64>>,
}

impl PosteriorBundle {
    pub fn new(id: impl Into<String>, components: Vec<ExpFamComponent>) -> Self {
        Self {
            id: id.into(),
            components,
            weights: None,
        }
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

impl ExpFamComponent {
    pub fn family(&self) -> Family {
        match self {
            ExpFamComponent::DiagGaussian(_) => Family::DiagGaussian,
            ExpFamComponent::Dirichlet(_) => Family::Dirichlet,
            ExpFamComponent::NormalWishart(_) => Family::NormalWishart,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ExpFamComponent::DiagGaussian(c) => c.dim(),
            ExpFamComponent::Dirichlet(c) => c.dim(),
            ExpFamComponent::NormalWishart(c) => c.dim(),
        }
    }

    /// Location summary used by the evaluation metrics: the Gaussian mean,
    /// the Dirichlet mean, or the Normal–Wishart location `m`.
    pub fn location(&self) -> Vec<f64> {
        match self {
            ExpFamComponent::DiagGaussian(c) => c.mean().to_vec(),
            ExpFamComponent::Dirichlet(c) => {
                let total: f64 = c.alpha().iter().sum();
                c.alpha().iter().map(|a| a / total).collect()
            }
            ExpFamComponent::NormalWishart(c) => c.mean().iter().copied().collect(),
        }
    }

    pub fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.family() != other.family() {
            return Err(Error::Incompatible(format!("family {} vs {}", self.family(), other.family())));
        }
        if self.dim() != other.dim() {
            return Err(Error::Incompatible(format!("dimension {} vs {}", self.dim(), other.dim())));
        }
        Ok(())
    }
}

pub fn to_natural(c: &ExpFamComponent) -> NaturalParams {
    let eta = match c {
        ExpFamComponent::DiagGaussian(g) => g.to_natural(),
        ExpFamComponent::Dirichlet(d) => d.to_natural(),
        ExpFamComponent::NormalWishart(nw) => nw.to_natural(),
    };
    NaturalParams {
        family: c.family(),
        dim: c.dim(),
        eta,
    }
}

pub fn from_natural(n: &NaturalParams) -> Result<ExpFamComponent> {
    from_natural_impl(n, false)
}

fn from_natural_impl(n: &NaturalParams, repair: bool) -> Result<ExpFamComponent> {
    Ok(match n.family {
        Family::DiagGaussian => DiagGaussian::from_natural(n.dim, &n.eta)?.into(),
        Family::Dirichlet => Dirichlet::from_natural(n.dim, &n.eta)?.into(),
        Family::NormalWishart => NormalWishart::from_natural(n.dim, &n.eta, repair)?.into(),
    })
}

/// Infers the dimension of a natural vector of the given family from its length.
pub fn dim_from_natural_len(family: Family, len: usize) -> Option<usize> {
    match family {
        Family::DiagGaussian => (len > 0 && len % 2 == 0).then_some(len / 2),
        Family::Dirichlet => (len > 1).then_some(len),
        Family::NormalWishart => normal_wishart::dim_from_natural_len(len),
    }
}

/// `KL(q ‖ p)`. In fusion `q` is the global candidate and `p` the local factor.
pub fn kl_divergence(q: &ExpFamComponent, p: &ExpFamComponent) -> Result<f64> {
    q.check_compatible(p)?;
    Ok(match (q, p) {
        (ExpFamComponent::DiagGaussian(a), ExpFamComponent::DiagGaussian(b)) => a.kl(b),
        (ExpFamComponent::Dirichlet(a), ExpFamComponent::Dirichlet(b)) => a.kl(b),
        (ExpFamComponent::NormalWishart(a), ExpFamComponent::NormalWishart(b)) => a.kl(b),
        _ => unreachable!("families checked above"),
    })
}

/// Monte Carlo estimate of `KL(q ‖ p)` as the mean of `ln q(x) − ln p(x)` over
/// `x ~ q`, with its standard error.
pub fn mc_kl_estimate(q: &ExpFamComponent, p: &ExpFamComponent, n_samples: usize, seed: u64) -> Result<(f64, f64)> {
    q.check_compatible(p)?;
    if n_samples < 1000 {
        return Err(Error::Value(format!("n_samples = {n_samples}, at least 1000 required")));
    }
    let mut rng = stream(seed, Purpose::MonteCarlo, 0);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_samples {
        let ratio = match (q, p) {
            (ExpFamComponent::DiagGaussian(a), ExpFamComponent::DiagGaussian(b)) => {
                let x = a.sample(&mut rng);
                a.log_density(&x) - b.log_density(&x)
            }
            (ExpFamComponent::Dirichlet(a), ExpFamComponent::Dirichlet(b)) => {
                let lx = a.sample_log(&mut rng);
                a.log_density_at_log(&lx) - b.log_density_at_log(&lx)
            }
            (ExpFamComponent::NormalWishart(a), ExpFamComponent::NormalWishart(b)) => {
                let (mu, prec) = a.sample(&mut rng);
                a.log_density(&mu, &prec) - b.log_density(&mu, &prec)
            }
            _ => unreachable!("families checked above"),
        };
        sum += ratio;
        sum_sq += ratio * ratio;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok((mean, (var / n).sqrt()))
}

/// Weighted KL barycenter: `argmin_q Σ_i λ_i KL(q ‖ c_i)` over the family.
pub fn barycenter(components: &[ExpFamComponent], weights: &Weights) -> Result<ExpFamComponent> {
    let first = components.first().ok_or_else(|| Error::Empty("barycenter of no components".into()))?;
    if weights.len() != components.len() {
        return Err(Error::Shape(format!(
            "{} weights for {} components",
            weights.len(),
            components.len()
        )));
    }
    for c in &components[1..] {
        first.check_compatible(c)?;
    }
    let mut acc = to_natural(first);
    acc.eta.iter_mut().for_each(|v| *v *= weights.values()[0]);
    for (c, &w) in components[1..].iter().zip(&weights.values()[1..]) {
        let n = to_natural(c);
        acc.eta.iter_mut().zip(&n.eta).for_each(|(a, b)| *a += w * b);
    }
    from_natural_impl(&acc, true)
}
