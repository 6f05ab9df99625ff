//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Relative singular-value floor for pattern matrices.
pub const PATTERN_RANK_TOL: f64 = 1e-8;
/// Relative eigenvalue floor when forming `(ξᵀξ)^{-1/2}`.
pub const EIGEN_RANK_TOL: f64 = 1e-10;

/// Singular values in decreasing order.
pub fn singular_values<T: Real>(m: &DMatrix<T>) -> Vec<T> {
    let mut s: Vec<T> = m.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).expect("finite singular values"));
    s
}

/// Errors with `RankDeficient` unless `σ_min ≥ tol · σ_max` and `cols ≤ rows`.
pub fn check_full_column_rank<T: Real>(m: &DMatrix<T>, tol: f64) -> Result<()> {
    if m.ncols() == 0 {
        return Ok(());
    }
    if m.ncols() > m.nrows() {
        return Err(Error::RankDeficient { ratio: 0.0 });
    }
    let s = singular_values(m);
    let (max, min) = (s[0], s[s.len() - 1]);
    if max <= T::zero() {
        return Err(Error::RankDeficient { ratio: 0.0 });
    }
    let ratio = (min / max).as_f64();
    if ratio < tol || !ratio.is_finite() {
        return Err(Error::RankDeficient { ratio });
    }
    Ok(())
}

/// 2-norm condition number `σ_max / σ_min` (infinite when singular).
pub fn condition_number<T: Real>(m: &DMatrix<T>) -> f64 {
    let s = singular_values(m);
    match (s.first(), s.last()) {
        (Some(&max), Some(&min)) if min > T::zero() => (max / min).as_f64(),
        _ => f64::INFINITY,
    }
}

/// `A^{-1/2}` for a symmetric positive definite matrix via its eigendecomposition.
pub fn inv_sqrt_spd<T: Real>(a: &DMatrix<T>) -> Result<DMatrix<T>> {
    let eig = SymmetricEigen::new(a.clone());
    let max = eig.eigenvalues.iter().fold(T::zero(), |m, &v| if v > m { v } else { m });
    let floor = max * T::lit(EIGEN_RANK_TOL);
    if let Some(&bad) = eig.eigenvalues.iter().find(|&&v| v <= floor) {
        let ratio = if max > T::zero() { (bad / max).as_f64() } else { 0.0 };
        return Err(Error::RankDeficient { ratio });
    }
    let d = eig.eigenvalues.map(|v| T::one() / v.sqrt());
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&d) * v.transpose())
}

/// Inverse of a symmetric positive definite matrix (Cholesky).
pub fn inv_spd<T: Real>(a: &DMatrix<T>) -> Result<DMatrix<T>> {
    a.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(Error::RankDeficient { ratio: 0.0 })
}

/// `‖UᵀU − I‖_F`.
pub fn orthogonality_defect<T: Real>(u: &DMatrix<T>) -> T {
    let g = u.transpose() * u;
    (g - DMatrix::identity(u.ncols(), u.ncols())).norm()
}

/// `ln det A` for a symmetric positive definite matrix.
pub fn ln_det_spd<T: Real>(a: &DMatrix<T>) -> Result<T> {
    let c = a.clone().cholesky().ok_or(Error::RankDeficient { ratio: 0.0 })?;
    Ok(c.l_dirty().diagonal().iter().fold(T::zero(), |acc, &d| acc + d.ln()) * T::lit(2.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_square_root_squares_to_inverse() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0f64, 1.0, 1.0, 3.0]);
        let r = inv_sqrt_spd(&a).unwrap();
        let back = &r * &r * &a;
        assert!((back - DMatrix::identity(2, 2)).norm() < 1e-12);
        assert!((ln_det_spd(&a).unwrap() - 11f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn rank_check_and_condition() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0f64, 2.0, 2.0, 4.0, 3.0, 6.0]);
        assert!(check_full_column_rank(&m, PATTERN_RANK_TOL).is_err());
        assert!(condition_number(&m) > 1e12);
        let m = DMatrix::<f64>::identity(3, 2);
        check_full_column_rank(&m, PATTERN_RANK_TOL).unwrap();
        assert!((condition_number(&m) - 1.0).abs() < 1e-12);
        assert!(orthogonality_defect(&m) < 1e-15);
    }
}
