//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest absolute entry of `m - mᵀ` relative to the largest absolute entry of `m`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    (m - m.transpose()).amax() / scale
}

pub fn cholesky(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Cholesky::new(m.clone())
}

pub fn ln_det_from_cholesky(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

/// Symmetrizes `m` and, if its smallest eigenvalue is not positive, shifts the
/// spectrum by `|λ_min| + 1e-10`.
pub fn repair_spd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut sym = symmetrize(m);
    let lo = min_eigenvalue(&sym);
    if lo <= 0.0 {
        let n = sym.nrows();
        sym += DMatrix::identity(n, n) * (lo.abs() + 1e-10);
    }
    sym
}

/// Σ_ij a_ij b_ij, i.e. tr(A B) for symmetric A, B.
pub fn trace_of_product_sym(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn standard_normal_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> DVector<f64> {
    DVector::from_iterator(dim, (0..dim).map(|_| StandardNormal.sample(rng)))
}

/// Haar-distributed random orthogonal matrix (QR of a Gaussian matrix with
/// the sign of R's diagonal folded into Q).
pub fn random_orthogonal<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Draws Λ ~ Wishart(scale, dof) by the Bartlett decomposition, given the
/// lower Cholesky factor of `scale`. `dof` may be any real > dim − 1.
pub fn sample_wishart<R: Rng + ?Sized>(rng: &mut R, scale_chol_lower: &DMatrix<f64>, dof: f64) -> DMatrix<f64> {
    let d = scale_chol_lower.nrows();
    let mut a = DMatrix::zeros(d, d);
    for i in 0..d {
        // χ²(k) = Gamma(k/2, scale 2)
        let k = dof - i as f64;
        let chi2: f64 = Gamma::new(k / 2.0, 2.0).expect("positive shape").sample(rng);
        a[(i, i)] = chi2.sqrt();
        for j in 0..i {
            a[(i, j)] = StandardNormal.sample(rng);
        }
    }
    let la = scale_chol_lower * a;
    symmetrize(&(&la * la.transpose()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    #[test]
    fn orthogonal_matrix_is_orthogonal() {
        let mut rng = stream(1, Purpose::Test, 0);
        let q = random_orthogonal(&mut rng, 6);
        let eye = DMatrix::<f64>::identity(6, 6);
        assert!((&q.transpose() * &q - eye).amax() < 1e-12);
    }

    #[test]
    fn wishart_sample_mean_matches_dof_times_scale() {
        let mut rng = stream(2, Purpose::Test, 0);
        let scale = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.5]);
        let l = cholesky(&scale).unwrap().l();
        let dof = 4.5;
        let n = 40_000;
        let mut acc = DMatrix::zeros(2, 2);
        for _ in 0..n {
            acc += sample_wishart(&mut rng, &l, dof);
        }
        acc /= n as f64;
        let expect = &scale * dof;
        assert!((acc - expect).amax() < 0.06, "empirical Wishart mean off");
    }

    #[test]
    fn repair_spd_leaves_pd_matrices_alone_and_fixes_indefinite_ones() {
        let pd = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        assert_eq!(repair_spd(&pd), pd);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-14]);
        let fixed = repair_spd(&bad);
        assert!(cholesky(&fixed).is_some());
    }
}
