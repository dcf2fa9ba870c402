//! Small dense helpers shared by both filters.

use nalgebra::{SMatrix, SymmetricEigen};

pub type Mat15 = SMatrix<f64, 15, 15>;
pub type Vec15 = nalgebra::SVector<f64, 15>;

const EXPM_TERMS: usize = 10;

/// 1-norm above which the argument is halved before the series.
const EXPM_SCALE_NORM: f64 = 0.125;

/// Matrix exponential by scaling and squaring with a 10-term Taylor series.
///
/// The series stops early once a term is exactly zero, which happens after a
/// few products for the nilpotent transition generators used here.
pub fn expm<const N: usize>(a: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    let norm = a.column_iter().map(|c| c.abs().sum()).fold(0.0, f64::max);
    let squarings = if norm > EXPM_SCALE_NORM {
        (norm / EXPM_SCALE_NORM).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a / 2f64.powi(squarings);

    let mut out = SMatrix::<f64, N, N>::identity();
    let mut term = SMatrix::<f64, N, N>::identity();
    for k in 1..EXPM_TERMS {
        term = term * scaled / k as f64;
        if term.iter().all(|x| *x == 0.0) {
            break;
        }
        out += term;
    }
    for _ in 0..squarings {
        out = out * out;
    }
    out
}

/// `(m + m^T) / 2`.
pub fn symmetrize<const N: usize>(m: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    (m + m.transpose()) * 0.5
}

pub fn asymmetry<const N: usize>(m: &SMatrix<f64, N, N>) -> f64 {
    (m - m.transpose()).norm()
}

pub fn min_eigenvalue(m: &Mat15) -> f64 {
    SymmetricEigen::new(symmetrize(m)).eigenvalues.min()
}

/// Spectral condition number of a symmetric 3x3 matrix; infinite when singular.
pub fn condition_number_sym3(m: &nalgebra::Matrix3<f64>) -> f64 {
    let eig = SymmetricEigen::new(symmetrize(m)).eigenvalues.map(f64::abs);
    let (lo, hi) = (eig.min(), eig.max());
    if lo == 0.0 || !lo.is_finite() {
        f64::INFINITY
    } else {
        hi / lo
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix2;

    #[test]
    fn expm_rotation_generator() {
        let a = Matrix2::new(0.0, -2.0, 2.0, 0.0);
        let e = expm(&a);
        let expected = Matrix2::new(2f64.cos(), -2f64.sin(), 2f64.sin(), 2f64.cos());
        assert!((e - expected).norm() < 1e-12);
    }

    #[test]
    fn expm_nilpotent_is_exact_polynomial() {
        let a = Matrix2::new(0.0, 3.0, 0.0, 0.0);
        assert_eq!(expm(&a), Matrix2::new(1.0, 3.0, 0.0, 1.0));
    }

    #[test]
    fn expm_scalar_growth() {
        let a = Matrix2::new(5.0, 0.0, 0.0, -1.0);
        let e = expm(&a);
        assert!((e[(0, 0)] / 5f64.exp() - 1.0).abs() < 1e-12);
        assert!((e[(1, 1)] - (-1f64).exp()).abs() < 1e-14);
    }
}
