//! Special functions used by the Dirichlet and Wishart formulas.

use std::f64::consts::PI;

pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

pub fn digamma(x: f64) -> f64 {
    statrs::function::gamma::digamma(x)
}

/// Log of the multivariate gamma function Γ_d(a).
pub fn ln_multigamma(a: f64, d: usize) -> f64 {
    let df = d as f64;
    let mut acc = df * (df - 1.0) / 4.0 * PI.ln();
    for i in 0..d {
        acc += ln_gamma(a - i as f64 / 2.0);
    }
    acc
}

/// Multivariate digamma ψ_d(a) = Σ_{i=0}^{d-1} ψ(a − i/2).
pub fn multidigamma(a: f64, d: usize) -> f64 {
    (0..d).map(|i| digamma(a - i as f64 / 2.0)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn ln_gamma_reference_values() {
        assert!(rel(ln_gamma(0.5), 0.5 * PI.ln()) < 1e-12);
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!(ln_gamma(2.0).abs() < 1e-14);
        // ln(9!) = ln 362880
        assert!(rel(ln_gamma(10.0), 362_880f64.ln()) < 1e-12);
        assert!(rel(ln_gamma(3.5), (15.0 / 8.0 * PI.sqrt()).ln()) < 1e-12);
        // ln Γ(100) = ln(99!)
        let ln_fact_99: f64 = (1..100).map(|k| (k as f64).ln()).sum();
        assert!(rel(ln_gamma(100.0), ln_fact_99) < 1e-12);
    }

    #[test]
    fn digamma_reference_values() {
        assert!(rel(digamma(1.0), -EULER_GAMMA) < 1e-12);
        assert!(rel(digamma(0.5), -EULER_GAMMA - 2.0 * 2f64.ln()) < 1e-12);
        // ψ(n) = H_{n-1} − γ
        let h: f64 = (1..10).map(|k| 1.0 / k as f64).sum();
        assert!(rel(digamma(10.0), h - EULER_GAMMA) < 1e-12);
        // recurrence ψ(x+1) = ψ(x) + 1/x
        for &x in &[0.3, 1.7, 4.2, 25.0] {
            assert!((digamma(x + 1.0) - digamma(x) - 1.0 / x).abs() < 1e-12);
        }
    }

    #[test]
    fn multigamma_reduces_to_gamma_in_one_dimension() {
        assert!((ln_multigamma(3.3, 1) - ln_gamma(3.3)).abs() < 1e-14);
        assert!((multidigamma(3.3, 1) - digamma(3.3)).abs() < 1e-14);
        // Γ_2(a) = √π Γ(a) Γ(a − 1/2)
        let a = 2.7;
        let expect = 0.5 * PI.ln() + ln_gamma(a) + ln_gamma(a - 0.5);
        assert!((ln_multigamma(a, 2) - expect).abs() < 1e-13);
    }
}
