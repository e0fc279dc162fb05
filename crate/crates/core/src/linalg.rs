//! Dense symmetric-matrix kernels shared by the estimators.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Default relative eigenvalue cutoff for [`pseudoinverse`].
pub const DEFAULT_PINV_RTOL: f64 = 1e-12;

/// Largest absolute entry of `M − Mᵀ`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

fn check_symmetric(m: &DMatrix<f64>, tol: f64) -> Result<()> {
    if !m.is_square() {
        return Err(Error::InvalidArgument(format!(
            "expected a square matrix, got {}×{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let asym = asymmetry(m);
    let scale = m.amax().max(1.0);
    if asym > tol * scale {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(())
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues and eigenvectors of a symmetric matrix, eigenvalues sorted
/// in descending order (columns of the eigenvector matrix follow).
pub fn sorted_symmetric_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Moore–Penrose pseudoinverse of a symmetric PSD matrix.
///
/// Eigenvalues at or below `rtol · λ_max` are treated as zero. Inputs whose
/// asymmetry exceeds `1e-10` (relative to the largest entry) are rejected.
pub fn pseudoinverse(m: &DMatrix<f64>, rtol: f64) -> Result<DMatrix<f64>> {
    check_symmetric(m, 1e-10)?;
    let n = m.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let cutoff = rtol * lmax;
    let mut out = DMatrix::zeros(n, n);
    if lmax == 0.0 {
        return Ok(out);
    }
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda.abs() > cutoff {
            let v = eig.eigenvectors.column(k);
            out += (v * v.transpose()) / lambda;
        }
    }
    Ok(out)
}

/// Numerical rank of a symmetric matrix under the same cutoff as [`pseudoinverse`].
pub fn symmetric_rank(m: &DMatrix<f64>, rtol: f64) -> usize {
    if m.nrows() == 0 {
        return 0;
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    if lmax == 0.0 {
        return 0;
    }
    eig.eigenvalues.iter().filter(|v| v.abs() > rtol * lmax).count()
}

/// Symmetric square root `L = V diag(√λ⁺) Vᵀ` of a PSD matrix, so that
/// `L Lᵀ = Σ`. Negative eigenvalues are clipped at zero.
pub fn psd_sqrt(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(sigma));
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    v * DMatrix::from_diagonal(&roots) * v.transpose()
}

/// Like [`psd_sqrt`] but rejects matrices with eigenvalues clearly below zero
/// (tolerance `1e-10 · max(1, trace)`).
pub fn checked_psd_sqrt(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_symmetric(sigma, 1e-10)?;
    let eig = SymmetricEigen::new(symmetrize(sigma));
    let min = eig.eigenvalues.min();
    let tol = 1e-10 * sigma.trace().abs().max(1.0);
    if min < -tol {
        return Err(Error::NotPsd(min));
    }
    Ok(psd_sqrt(sigma))
}

/// 2-norm condition number of a symmetric matrix (`∞` when singular or indefinite).
pub fn symmetric_condition_number(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(symmetrize(m));
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_psd(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, rank, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose()
    }

    #[test]
    fn identity_and_rank_deficient_diagonal() {
        let i3 = DMatrix::<f64>::identity(3, 3);
        assert_eq!(pseudoinverse(&i3, DEFAULT_PINV_RTOL).unwrap(), i3);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 0.0]));
        let pinv = pseudoinverse(&d, DEFAULT_PINV_RTOL).unwrap();
        assert!((pinv[(0, 0)] - 0.25).abs() < 1e-15);
        assert_eq!(pinv[(1, 1)], 0.0);
        assert_eq!(pinv[(0, 1)], 0.0);
    }

    #[test]
    fn asymmetric_input_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(pseudoinverse(&m, DEFAULT_PINV_RTOL), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn penrose_conditions_on_random_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..50 {
            let n = 2 + trial % 6;
            let rank = 1 + trial % n;
            let m = random_psd(&mut rng, n, rank);
            let p = pseudoinverse(&m, DEFAULT_PINV_RTOL).unwrap();
            let norm = m.norm();
            assert!((&m * &p * &m - &m).norm() <= 1e-8 * norm);
            assert!((&p * &m * &p - &p).norm() <= 1e-8 * p.norm().max(1.0));
            assert_eq!(symmetric_rank(&m, 1e-10), rank);
        }
    }

    #[test]
    fn psd_sqrt_reproduces_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_psd(&mut rng, 4, 2);
        let l = psd_sqrt(&m);
        assert!((&l * l.transpose() - &m).amax() < 1e-12);
        let bad = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        assert!(matches!(checked_psd_sqrt(&bad), Err(Error::NotPsd(_))));
    }

    #[test]
    fn eigen_sorted_descending() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0, 2.0]));
        let (vals, vecs) = sorted_symmetric_eigen(&m);
        assert_eq!(vals.as_slice(), &[3.0, 2.0, 1.0]);
        assert_eq!(vecs[(1, 0)].abs(), 1.0);
        assert_eq!(symmetric_condition_number(&m), 3.0);
    }
}
