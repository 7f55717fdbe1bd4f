//! Small dense linear-algebra helpers shared across modules.
//!
//! Everything here wraps nalgebra; the matrices in this crate are small
//! (at most 64x64 for the 6-qubit quantum states), so dense
//! factorizations are always appropriate.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Largest singular value of a real matrix.
pub fn sigma_max(m: &DMatrix<f64>) -> f64 {
    m.singular_values().max()
}

/// Eigenvalues of a real symmetric matrix, unordered.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    m.clone().symmetric_eigenvalues()
}

/// Largest eigenvalue of a real symmetric matrix.
pub fn sym_eig_max(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).max()
}

/// Smallest eigenvalue of a real symmetric matrix.
pub fn sym_eig_min(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).min()
}

/// Spectral radius of a real square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|l| l.norm()).fold(0.0, f64::max)
}

/// Max absolute entry of `m - m^T`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Max absolute entry of `m - m^dagger`.
pub fn hermitian_defect(m: &DMatrix<Complex64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Eigenvalues of a Hermitian matrix (real, unordered).
pub fn hermitian_eigenvalues(m: &DMatrix<Complex64>) -> DVector<f64> {
    m.clone().symmetric_eigenvalues()
}

/// Schatten 1-norm: the sum of singular values. For Hermitian input this
/// equals the sum of absolute eigenvalues, which is cheaper and more
/// accurate, so callers with Hermitian matrices should prefer
/// [`schatten1_hermitian`].
pub fn schatten1(m: &DMatrix<Complex64>) -> f64 {
    m.clone().singular_values().iter().sum()
}

/// Schatten 1-norm of a Hermitian matrix via its eigenvalues.
pub fn schatten1_hermitian(m: &DMatrix<Complex64>) -> f64 {
    hermitian_eigenvalues(m).iter().map(|l| l.abs()).sum()
}

/// Largest singular value of a Hermitian matrix (max |eigenvalue|).
pub fn sigma_max_hermitian(m: &DMatrix<Complex64>) -> f64 {
    hermitian_eigenvalues(m).iter().map(|l| l.abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use num_complex::Complex64 as C;

    #[test]
    fn sigma_max_of_diag() {
        let m = dmatrix![3.0, 0.0; 0.0, -7.0];
        assert!((sigma_max(&m) - 7.0).abs() < 1e-12);
    }

    #[test]
    fn sym_eig_bounds() {
        let m = dmatrix![2.0, 1.0; 1.0, 2.0];
        assert!((sym_eig_max(&m) - 3.0).abs() < 1e-12);
        assert!((sym_eig_min(&m) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spectral_radius_rotation() {
        // Rotation by 90 degrees scaled by 0.5: complex eigenvalues of norm 0.5.
        let m = dmatrix![0.0, -0.5; 0.5, 0.0];
        assert!((spectral_radius(&m) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn schatten1_matches_eigen_route_for_hermitian() {
        let m = DMatrix::from_row_slice(
            2,
            2,
            &[C::new(1.0, 0.0), C::new(0.0, 2.0), C::new(0.0, -2.0), C::new(-1.0, 0.0)],
        );
        assert!(hermitian_defect(&m) < 1e-15);
        let a = schatten1(&m);
        let b = schatten1_hermitian(&m);
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}
