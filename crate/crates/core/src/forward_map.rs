//! Hopfield → RBM maps through orthogonal factorizations of the pattern matrix,
//! and the two non-restricted Boltzmann machines with coupled hidden units.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::evaluation::{enumerate_visible, ContinuousModel};
use crate::linalg;
use crate::patterns::PatternMatrix;
use crate::rbm::GaussBernRbm;
use crate::scalar::{ln_cosh, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FactorizationMethod {
    #[default]
    Qr,
    Sqrt,
    Svd,
}

impl FromStr for FactorizationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "qr" => Ok(Self::Qr),
            "sqrt" => Ok(Self::Sqrt),
            "svd" => Ok(Self::Svd),
            other => Err(Error::InvalidConfig(format!("unknown factorization {other:?} (expected qr, sqrt or svd)"))),
        }
    }
}

impl fmt::Display for FactorizationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Qr => "qr",
            Self::Sqrt => "sqrt",
            Self::Svd => "svd",
        })
    }
}

/// What each factorization carries besides `U`.
#[derive(Debug, Clone, PartialEq)]
pub enum Companion<T: Real> {
    /// `ξ = UR`, `R` upper triangular with positive diagonal.
    Qr { r: DMatrix<T> },
    /// `U = ξ (ξᵀξ)^{−1/2}`.
    Sqrt { inv_sqrt_overlap: DMatrix<T> },
    /// `ξ = U diag(σ) Vᵀ`.
    Svd { sigma: DVector<T>, v: DMatrix<T> },
}

/// `U` with orthonormal columns spanning the patterns, so `UUᵀ` is the projection coupling.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthogonalFactorization<T: Real> {
    pub u: DMatrix<T>,
    pub companion: Companion<T>,
}

/// Thin Householder QR with the signs fixed so that `diag(R) > 0`.
pub fn qr_positive<T: Real>(m: &DMatrix<T>) -> (DMatrix<T>, DMatrix<T>) {
    let qr = m.clone().qr();
    let (mut q, mut r) = (qr.q(), qr.r());
    for j in 0..r.nrows() {
        if r[(j, j)] < T::zero() {
            q.column_mut(j).neg_mut();
            r.row_mut(j).neg_mut();
        }
    }
    (q, r)
}

pub fn qr_orthogonalize<T: Real>(xi: &PatternMatrix) -> Result<OrthogonalFactorization<T>> {
    let m = xi.as_matrix::<T>();
    linalg::check_full_column_rank(&m, linalg::PATTERN_RANK_TOL)?;
    let (u, r) = qr_positive(&m);
    Ok(OrthogonalFactorization { u, companion: Companion::Qr { r } })
}

pub fn sqrt_factorization<T: Real>(xi: &PatternMatrix) -> Result<OrthogonalFactorization<T>> {
    let m = xi.as_matrix::<T>();
    linalg::check_full_column_rank(&m, linalg::PATTERN_RANK_TOL)?;
    let inv_sqrt_overlap = linalg::inv_sqrt_spd(&m.tr_mul(&m))?;
    Ok(OrthogonalFactorization { u: &m * &inv_sqrt_overlap, companion: Companion::Sqrt { inv_sqrt_overlap } })
}

pub fn svd_factorization<T: Real>(xi: &PatternMatrix) -> Result<OrthogonalFactorization<T>> {
    let m = xi.as_matrix::<T>();
    linalg::check_full_column_rank(&m, linalg::PATTERN_RANK_TOL)?;
    let svd = m.svd(true, true);
    let u = svd.u.expect("requested U");
    let v = svd.v_t.expect("requested Vᵀ").transpose();
    Ok(OrthogonalFactorization { u, companion: Companion::Svd { sigma: svd.singular_values, v } })
}

pub fn factorize<T: Real>(xi: &PatternMatrix, method: FactorizationMethod) -> Result<OrthogonalFactorization<T>> {
    match method {
        FactorizationMethod::Qr => qr_orthogonalize(xi),
        FactorizationMethod::Sqrt => sqrt_factorization(xi),
        FactorizationMethod::Svd => svd_factorization(xi),
    }
}

/// RBM with `W = U` (the chosen orthogonal factor), `c = 0` and visible bias `b`
/// (zero when absent). Its visible marginal is the Hopfield Boltzmann distribution.
pub fn hn_to_rbm<T: Real>(
    xi: &PatternMatrix,
    beta: T,
    bias: Option<DVector<T>>,
    method: FactorizationMethod,
) -> Result<GaussBernRbm<T>> {
    let f = factorize::<T>(xi, method)?;
    let b = bias.unwrap_or_else(|| DVector::zeros(xi.n()));
    GaussBernRbm::new(f.u, b, DVector::zeros(xi.p()), beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BmForm {
    /// Hidden coupling `ξᵀξ/N`, visible–hidden coupling `ξ/√N`.
    Overlap,
    /// Hidden coupling `(ξᵀξ)⁻¹`, visible–hidden coupling `ξ(ξᵀξ)⁻¹`.
    Projection,
}

/// Boltzmann machine `H(s, λ) = ½ λᵀPλ − sᵀGλ − bᵀs` with coupled gaussian hidden units.
///
/// Its `λ` density carries the prefactor `det(βP/2π)^{1/2}`, so that its
/// partition function equals the Hopfield one exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledBm<T: Real> {
    pub form: BmForm,
    pub hidden_coupling: DMatrix<T>,
    pub visible_coupling: DMatrix<T>,
    pub b: DVector<T>,
    pub beta: T,
    hidden_inverse: DMatrix<T>,
    ln_det_hidden: T,
}

impl<T: Real> CoupledBm<T> {
    fn new(form: BmForm, hidden_coupling: DMatrix<T>, visible_coupling: DMatrix<T>, beta: T) -> Result<Self> {
        let hidden_inverse = linalg::inv_spd(&hidden_coupling)?;
        let ln_det_hidden = linalg::ln_det_spd(&hidden_coupling)?;
        let n = visible_coupling.nrows();
        Ok(Self { form, hidden_coupling, visible_coupling, b: DVector::zeros(n), beta, hidden_inverse, ln_det_hidden })
    }

    /// `½ ln det(P)`, the determinant part of the density prefactor.
    pub fn ln_prefactor(&self) -> T {
        self.ln_det_hidden * T::lit(0.5)
    }

    fn field(&self, lambda: &DVector<T>) -> DVector<T> {
        &self.visible_coupling * lambda + &self.b
    }
}

pub fn build_overlap_bm<T: Real>(xi: &PatternMatrix, beta: T) -> Result<CoupledBm<T>> {
    let m = xi.as_matrix::<T>();
    linalg::check_full_column_rank(&m, linalg::PATTERN_RANK_TOL)?;
    let n = T::count(xi.n());
    CoupledBm::new(BmForm::Overlap, m.tr_mul(&m) / n, m / n.sqrt(), beta)
}

pub fn build_projection_bm<T: Real>(xi: &PatternMatrix, beta: T) -> Result<CoupledBm<T>> {
    let m = xi.as_matrix::<T>();
    linalg::check_full_column_rank(&m, linalg::PATTERN_RANK_TOL)?;
    let inv = linalg::inv_spd(&m.tr_mul(&m))?;
    let g = &m * &inv;
    CoupledBm::new(BmForm::Projection, (&inv + inv.transpose()) * T::lit(0.5), g, beta)
}

impl<T: Real> ContinuousModel<T> for CoupledBm<T> {
    fn n_visible(&self) -> usize {
        self.visible_coupling.nrows()
    }

    fn n_hidden(&self) -> usize {
        self.visible_coupling.ncols()
    }

    fn beta(&self) -> T {
        self.beta
    }

    fn log_kernel(&self, lambda: &DVector<T>) -> T {
        let quad = (&self.hidden_coupling * lambda).dot(lambda) * self.beta * T::lit(0.5);
        self.field(lambda).iter().fold(-quad, |acc, &x| acc + ln_cosh(self.beta * x))
    }

    fn f0_gradient(&self, lambda: &DVector<T>) -> DVector<T> {
        let t = self.field(lambda).map(|x| (self.beta * x).tanh());
        &self.hidden_coupling * lambda - self.visible_coupling.tr_mul(&t)
    }

    fn log_norm(&self) -> T {
        let (n, p) = self.visible_coupling.shape();
        T::count(n) * T::LN_2() + T::count(p) * T::lit(0.5) * (self.beta.ln() - T::two_pi().ln()) + self.ln_prefactor()
    }

    fn proposal(&self) -> (DVector<T>, DMatrix<T>) {
        let cov = &self.hidden_inverse / self.beta;
        let chol = cov.cholesky().expect("inverse of a positive definite coupling").l();
        (DVector::zeros(self.n_hidden()), chol)
    }

    fn ln_z_exact(&self) -> Result<T> {
        let half_beta = self.beta * T::lit(0.5);
        enumerate_visible(&self.visible_coupling, &self.b, self.beta, |v| half_beta * (&self.hidden_inverse * v).dot(v))
    }

    fn bounding_box(&self) -> (DVector<T>, DVector<T>) {
        let gp = &self.visible_coupling * &self.hidden_inverse;
        let half = DVector::from_fn(self.n_hidden(), |mu, _| {
            let spread = gp.column(mu).iter().fold(T::zero(), |a, &v| a + v.abs());
            spread + T::lit(12.0) * (self.hidden_inverse[(mu, mu)] / self.beta).sqrt()
        });
        (DVector::zeros(self.n_hidden()), half)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{ln_z_enumerate, ln_z_quadrature};
    use crate::hopfield::{log_partition_enumerate, projection_couplings};
    use rand::{Rng, SeedableRng};

    fn pm(cols: &[&[i8]]) -> PatternMatrix {
        PatternMatrix::new(cols.iter().map(|c| c.to_vec()).collect(), (0..cols.len() as u8).collect()).unwrap()
    }

    fn random_patterns(n: usize, p: usize, seed: u64) -> PatternMatrix {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        loop {
            let cols: Vec<Vec<i8>> =
                (0..p).map(|_| (0..n).map(|_| if rng.random::<f64>() < 0.65 { 1 } else { -1 }).collect()).collect();
            let xi = PatternMatrix::new(cols, (0..p as u8).collect()).unwrap();
            if xi.check_rank().is_ok() {
                return xi;
            }
        }
    }

    fn orthogonal4() -> PatternMatrix {
        pm(&[&[1, 1, 1, 1], &[1, -1, 1, -1]])
    }

    #[test]
    fn qr_of_single_all_ones_pattern() {
        let f = qr_orthogonalize::<f64>(&pm(&[&[1, 1, 1, 1]])).unwrap();
        assert!(f.u.iter().all(|&v| (v - 0.5).abs() < 1e-15));
        let Companion::Qr { r } = f.companion else { panic!("QR companion") };
        assert!((r[(0, 0)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_patterns_factor_trivially() {
        let xi = orthogonal4();
        let x = xi.as_matrix::<f64>();
        for method in [FactorizationMethod::Qr, FactorizationMethod::Sqrt] {
            let f = factorize::<f64>(&xi, method).unwrap();
            assert!((&f.u - &x / 2.0).norm() < 1e-12, "{method}");
        }
        let Companion::Qr { r } = qr_orthogonalize::<f64>(&xi).unwrap().companion else { unreachable!() };
        assert!((r - DMatrix::identity(2, 2) * 2.0).norm() < 1e-12);
        let Companion::Svd { sigma, .. } = svd_factorization::<f64>(&xi).unwrap().companion else { unreachable!() };
        assert!(sigma.iter().all(|&s| (s - 2.0).abs() < 1e-12));
    }

    #[test]
    fn qr_reconstructs_correlated_patterns() {
        let xi = random_patterns(8, 3, 1);
        let f = qr_orthogonalize::<f64>(&xi).unwrap();
        let Companion::Qr { r } = &f.companion else { unreachable!() };
        assert!((&f.u * r - xi.as_matrix::<f64>()).norm() < 1e-10);
        assert!(linalg::orthogonality_defect(&f.u) < 1e-10);
        for i in 0..3 {
            assert!(r[(i, i)] > 0.0);
            for j in 0..i {
                assert_eq!(r[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn factorizations_agree_on_projection() {
        let xi = random_patterns(12, 4, 2);
        let j = projection_couplings::<f64>(&xi).unwrap().couplings().clone();
        let q = qr_orthogonalize::<f64>(&xi).unwrap().u;
        let k = sqrt_factorization::<f64>(&xi).unwrap().u;
        let svd = svd_factorization::<f64>(&xi).unwrap();
        for u in [&q, &k, &svd.u] {
            assert!((u * u.transpose() - &j).norm() < 1e-8);
            assert!(linalg::orthogonality_defect(u) < 1e-10);
        }
        let o = q.transpose() * &k;
        assert!((&o * o.transpose() - DMatrix::identity(4, 4)).norm() < 1e-8);

        let Companion::Svd { sigma, v } = svd.companion else { unreachable!() };
        let x = xi.as_matrix::<f64>();
        let s2 = DMatrix::from_diagonal(&sigma.map(|s| s * s));
        assert!((&svd.u * DMatrix::from_diagonal(&sigma) * v.transpose() - &x).norm() < 1e-8);
        assert!((x.transpose() * &x - &v * &s2 * v.transpose()).norm() < 1e-8);
        assert!((&x * x.transpose() / 12.0 - &svd.u * &s2 * svd.u.transpose() / 12.0).norm() < 1e-8);
    }

    #[test]
    fn column_order_and_sign_do_not_change_projection() {
        let xi = random_patterns(10, 3, 3);
        let cols: Vec<Vec<i8>> = [2, 0, 1]
            .iter()
            .enumerate()
            .map(|(k, &mu)| xi.column(mu).iter().map(|&v| if k == 1 { -v } else { v }).collect())
            .collect();
        let permuted = PatternMatrix::new(cols, vec![2, 0, 1]).unwrap();
        let a = svd_factorization::<f64>(&xi).unwrap().u;
        let b = svd_factorization::<f64>(&permuted).unwrap().u;
        assert!((&a * a.transpose() - &b * b.transpose()).norm() < 1e-10);
    }

    #[test]
    fn rank_deficient_patterns_rejected() {
        let xi = pm(&[&[1, 1, -1, 1], &[1, 1, -1, 1]]);
        assert!(matches!(qr_orthogonalize::<f64>(&xi), Err(Error::RankDeficient { .. })));
        assert!(matches!(build_overlap_bm::<f64>(&xi, 1.0), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn orthogonal_mapping_is_scaled_patterns() {
        let xi = orthogonal4();
        let rbm = hn_to_rbm::<f64>(&xi, 2.0, None, FactorizationMethod::Qr).unwrap();
        assert!((&rbm.w - xi.as_matrix::<f64>() / 2.0).norm() < 1e-12);
        let bm = build_overlap_bm::<f64>(&xi, 2.0).unwrap();
        assert!((&bm.hidden_coupling - DMatrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn single_pattern_partition_functions_agree() {
        let xi = pm(&[&[1, 1, 1, 1]]);
        let net = projection_couplings::<f64>(&xi).unwrap();
        let rbm = hn_to_rbm::<f64>(&xi, 1.0, None, FactorizationMethod::Qr).unwrap();
        let hn = log_partition_enumerate(&net).unwrap();
        assert!(((ln_z_enumerate(&rbm).unwrap().value - hn) / hn).abs() < 1e-12);
    }

    #[test]
    fn coupled_machines_match_hopfield_partition_function() {
        let xi = random_patterns(6, 2, 4);
        let net = projection_couplings::<f64>(&xi).unwrap().with_beta(1.5).unwrap();
        let hn = log_partition_enumerate(&net).unwrap();
        for bm in [build_overlap_bm::<f64>(&xi, 1.5).unwrap(), build_projection_bm::<f64>(&xi, 1.5).unwrap()] {
            assert!((bm.ln_z_exact().unwrap() - hn).abs() < 1e-10, "{:?}", bm.form);
            let q = ln_z_quadrature(&bm).unwrap().value;
            assert!((q - hn).abs() < 1e-6, "{:?}: {q} vs {hn}", bm.form);
        }
    }

    #[test]
    fn f0_gradients_match_finite_differences() {
        let xi = random_patterns(9, 3, 5);
        let rbm = hn_to_rbm::<f64>(&xi, 2.0, None, FactorizationMethod::Qr).unwrap();
        let overlap = build_overlap_bm::<f64>(&xi, 2.0).unwrap();
        let projection = build_projection_bm::<f64>(&xi, 2.0).unwrap();
        let models: [&dyn ContinuousModel<f64>; 3] = [&rbm, &overlap, &projection];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        for model in models {
            for _ in 0..5 {
                let lambda = DVector::from_fn(3, |_, _| rng.random::<f64>() * 4.0 - 2.0);
                let g = model.f0_gradient(&lambda);
                for mu in 0..3 {
                    let mut up = lambda.clone();
                    up[mu] += 1e-5;
                    let mut dn = lambda.clone();
                    dn[mu] -= 1e-5;
                    let fd = (model.f0(&up) - model.f0(&dn)) / 2e-5;
                    assert!((fd - g[mu]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn f0_minima_sit_at_scaled_patterns() {
        let xi = pm(&[&[1, 1, 1, 1, 1, 1, 1, 1], &[1, -1, 1, -1, 1, -1, 1, -1]]);
        let rbm = hn_to_rbm::<f64>(&xi, 20.0, None, FactorizationMethod::Qr).unwrap();
        let root_n = 8f64.sqrt();
        for mu in 0..2 {
            for sign in [1.0, -1.0] {
                let mut lambda = DVector::from_fn(2, |k, _| if k == mu { 0.8 * sign * root_n } else { 0.3 });
                for _ in 0..2000 {
                    lambda -= rbm.f0_gradient(&lambda) * 0.1;
                }
                let want = DVector::from_fn(2, |k, _| if k == mu { sign * root_n } else { 0.0 });
                assert!((lambda - want).norm() < 1e-3);
            }
        }
    }
}
