//! Partition-function and likelihood estimation.
//!
//! Every model here has a continuous representation: summing out the
//! visible spins leaves a density over `λ ∈ ℝ^p` whose integral is `Z`.

mod ais;
mod quadrature;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data_io::BinaryDataset;
use crate::error::{Error, Result};
use crate::rbm::GaussBernRbm;
use crate::scalar::{ln_cosh, Real};

pub use ais::{ln_z_ais, AisConfig, AisRun, Schedule};
pub use quadrature::{ln_integral_box, ln_z_quadrature, MAX_QUADRATURE_DIM};

/// Largest visible layer summed exhaustively.
pub const MAX_ENUMERATION_VISIBLE: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LnZMethod {
    Enumeration,
    Quadrature,
    Ais,
}

/// `ln Z` in nats with its provenance; `stderr` is zero for exact methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LnZEstimate {
    pub value: f64,
    pub method: LnZMethod,
    pub chains: usize,
    pub steps: usize,
    pub stderr: f64,
}

impl LnZEstimate {
    pub fn exact(value: f64, method: LnZMethod) -> Self {
        Self { value, method, chains: 0, steps: 0, stderr: 0.0 }
    }
}

/// A model whose partition function is `Z = ∫ e^{log_norm − βF₀(λ)} dλ`.
pub trait ContinuousModel<T: Real>: Sync {
    fn n_visible(&self) -> usize;
    fn n_hidden(&self) -> usize;
    fn beta(&self) -> T;

    /// `−βF₀(λ)`.
    fn log_kernel(&self, lambda: &DVector<T>) -> T;

    /// `∇F₀(λ)`.
    fn f0_gradient(&self, lambda: &DVector<T>) -> DVector<T>;

    /// Constant so that `log_norm + log_kernel(λ)` integrates to `Z`.
    fn log_norm(&self) -> T;

    /// Gaussian AIS proposal: mean and lower Cholesky factor of the covariance.
    fn proposal(&self) -> (DVector<T>, DMatrix<T>);

    /// Exact `ln Z` summing all `2^N` visible states with `λ` integrated analytically.
    fn ln_z_exact(&self) -> Result<T>;

    /// Centre and half-widths of a box outside which the `λ` density is negligible.
    fn bounding_box(&self) -> (DVector<T>, DVector<T>);

    /// Free energy `F₀(λ)` (the approximate Lyapunov function of the mean dynamics).
    fn f0(&self, lambda: &DVector<T>) -> T {
        -self.log_kernel(lambda) / self.beta()
    }

    fn log_target(&self, lambda: &DVector<T>) -> T {
        self.log_norm() + self.log_kernel(lambda)
    }
}

/// `F₀(λ)` of any continuous representation.
pub fn f0_landscape<T: Real, M: ContinuousModel<T> + ?Sized>(model: &M, lambda: &DVector<T>) -> T {
    model.f0(lambda)
}

impl<T: Real> ContinuousModel<T> for GaussBernRbm<T> {
    fn n_visible(&self) -> usize {
        self.w.nrows()
    }

    fn n_hidden(&self) -> usize {
        self.w.ncols()
    }

    fn beta(&self) -> T {
        self.beta
    }

    fn log_kernel(&self, lambda: &DVector<T>) -> T {
        let x = self.visible_field(lambda);
        let half_beta = self.beta * T::lit(0.5);
        x.iter().fold(-half_beta * (lambda - &self.c).norm_squared(), |acc, &xi| acc + ln_cosh(self.beta * xi))
    }

    fn f0_gradient(&self, lambda: &DVector<T>) -> DVector<T> {
        let t = self.visible_field(lambda).map(|x| (self.beta * x).tanh());
        lambda - &self.c - self.w.tr_mul(&t)
    }

    fn log_norm(&self) -> T {
        let (n, p) = self.w.shape();
        T::count(n) * T::LN_2() + T::count(p) * T::lit(0.5) * (self.beta.ln() - T::two_pi().ln())
    }

    fn proposal(&self) -> (DVector<T>, DMatrix<T>) {
        let p = self.n_hidden();
        (DVector::zeros(p), DMatrix::identity(p, p))
    }

    fn ln_z_exact(&self) -> Result<T> {
        let half_beta = self.beta * T::lit(0.5);
        let cc = self.c.norm_squared();
        enumerate_visible(&self.w, &self.b, self.beta, |v| half_beta * ((v + &self.c).norm_squared() - cc))
    }

    fn bounding_box(&self) -> (DVector<T>, DVector<T>) {
        let sd = T::one() / self.beta.sqrt();
        let half = DVector::from_iterator(
            self.n_hidden(),
            self.w.column_iter().map(|col| col.iter().fold(T::zero(), |a, &v| a + v.abs()) + T::lit(12.0) * sd),
        );
        (self.c.clone(), half)
    }
}

/// `ln Σ_s exp(β bᵀs + q(Gᵀs))` over all `s ∈ {±1}^N`, visiting states in
/// Gray-code order so each step updates `Gᵀs` with one row of `G`.
pub(crate) fn enumerate_visible<T: Real>(
    g: &DMatrix<T>,
    b: &DVector<T>,
    beta: T,
    q: impl Fn(&DVector<T>) -> T,
) -> Result<T> {
    let n = g.nrows();
    if n > MAX_ENUMERATION_VISIBLE {
        return Err(Error::TooLarge { method: "enumeration", limit: MAX_ENUMERATION_VISIBLE, actual: n });
    }
    let mut s = vec![-1i8; n];
    let full = |s: &[i8]| {
        let sv = DVector::from_iterator(n, s.iter().map(|&v| T::from_spin(v)));
        (g.tr_mul(&sv), b.dot(&sv))
    };
    let (mut v, mut bs) = full(&s);
    let two = T::lit(2.0);
    let mut max = T::zero();
    let mut sum = T::zero();
    let mut first = true;
    for k in 0..1usize << n {
        if k > 0 {
            let i = k.trailing_zeros() as usize;
            s[i] = -s[i];
            if k % 4096 == 0 {
                // refresh to keep the running sums from drifting
                (v, bs) = full(&s);
            } else {
                let d = two * T::from_spin(s[i]);
                v.axpy(d, &g.row(i).transpose(), T::one());
                bs += d * b[i];
            }
        }
        let term = beta * bs + q(&v);
        if first || term > max {
            sum = if first { T::zero() } else { sum * (max - term).exp() };
            max = term;
            first = false;
        }
        sum += (term - max).exp();
    }
    Ok(max + sum.ln())
}

/// Exact `ln Z` of an RBM.
pub fn ln_z_enumerate<T: Real, M: ContinuousModel<T> + ?Sized>(model: &M) -> Result<LnZEstimate> {
    Ok(LnZEstimate::exact(model.ln_z_exact()?.as_f64(), LnZMethod::Enumeration))
}

/// Mean log-probability per sample:
/// `(β/M) Σ_a (bᵀs_a + ½‖c + Wᵀs_a‖²) − (β/2)‖c‖² − ln Z`.
pub fn log_likelihood<T: Real>(rbm: &GaussBernRbm<T>, data: &BinaryDataset, ln_z: &LnZEstimate) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidDataset("log-likelihood of an empty dataset".into()));
    }
    if data.n_visible() != rbm.n_visible() {
        return Err(Error::DimensionMismatch("dataset and model sizes differ".into()));
    }
    const CHUNK: usize = 1024;
    let mut total = 0.0f64;
    let mut start = 0;
    while start < data.len() {
        let end = (start + CHUNK).min(data.len());
        let s = data.to_matrix::<T>(start..end);
        let mut h = &s * &rbm.w;
        for mut row in h.row_iter_mut() {
            row += rbm.c.transpose();
        }
        let bs = &s * &rbm.b;
        for a in 0..end - start {
            total += (bs[a] + h.row(a).norm_squared() * T::lit(0.5)).as_f64();
        }
        start = end;
    }
    let beta = rbm.beta.as_f64();
    Ok(beta * total / data.len() as f64 - 0.5 * beta * rbm.c.norm_squared().as_f64() - ln_z.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::Split;
    use crate::hopfield::{energy, log_partition_enumerate, projection_couplings, spins_from_code};
    use crate::patterns::PatternMatrix;
    use crate::scalar::log_sum_exp;
    use rand::{Rng, SeedableRng};

    fn random_rbm(n: usize, p: usize, scale: f64, seed: u64) -> GaussBernRbm<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut r = || scale * (rng.random::<f64>() * 2.0 - 1.0);
        let w = DMatrix::from_fn(n, p, |_, _| r());
        let b = DVector::from_fn(n, |_, _| 0.3 * r());
        let c = DVector::from_fn(p, |_, _| 0.3 * r());
        GaussBernRbm::new(w, b, c, 1.5).unwrap()
    }

    #[test]
    fn uniform_model_has_n_ln_2() {
        for beta in [0.3, 1.0, 4.0] {
            let rbm = GaussBernRbm::<f64>::from_weights(DMatrix::zeros(7, 2), beta).unwrap();
            assert!((ln_z_enumerate(&rbm).unwrap().value - 7.0 * 2f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn enumeration_matches_naive_sum() {
        let rbm = random_rbm(9, 3, 0.8, 1);
        let naive: Vec<f64> = (0..1 << 9).map(|c| rbm.visible_log_weight(&spins_from_code(c, 9))).collect();
        assert!((ln_z_enumerate(&rbm).unwrap().value - log_sum_exp(&naive)).abs() < 1e-11);
    }

    #[test]
    fn hopfield_mapped_rbm_matches_hopfield_sum() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let cols: Vec<Vec<i8>> = (0..2).map(|_| (0..10).map(|_| if rng.random::<f64>() < 0.6 { 1 } else { -1 }).collect()).collect();
        let xi = PatternMatrix::new(cols, vec![0, 1]).unwrap();
        let net = projection_couplings::<f64>(&xi).unwrap().with_beta(1.7).unwrap();
        let rbm = GaussBernRbm::from_weights(net.factor().unwrap().clone(), 1.7).unwrap();
        let hn = log_partition_enumerate(&net).unwrap();
        assert!(((ln_z_enumerate(&rbm).unwrap().value - hn) / hn).abs() < 1e-10);
        let _ = energy(&net, &[1; 10]);
    }

    #[test]
    fn enumeration_guard() {
        let rbm = GaussBernRbm::<f64>::from_weights(DMatrix::zeros(21, 1), 1.0).unwrap();
        assert!(matches!(ln_z_enumerate(&rbm), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn f0_gradient_matches_finite_differences() {
        let rbm = random_rbm(7, 3, 1.0, 3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let lambda = DVector::from_fn(3, |_, _| rng.random::<f64>() * 4.0 - 2.0);
            let g = rbm.f0_gradient(&lambda);
            for mu in 0..3 {
                let h = 1e-5;
                let mut up = lambda.clone();
                up[mu] += h;
                let mut dn = lambda.clone();
                dn[mu] -= h;
                let fd = (rbm.f0(&up) - rbm.f0(&dn)) / (2.0 * h);
                assert!((fd - g[mu]).abs() < 1e-6, "{fd} vs {}", g[mu]);
            }
        }
        let zero_bias = GaussBernRbm::from_weights(rbm.w.clone(), 1.5).unwrap();
        assert_eq!(f0_landscape(&zero_bias, &DVector::zeros(3)), 0.0);
    }

    #[test]
    fn likelihood_of_uniform_model() {
        let rbm = GaussBernRbm::<f64>::from_weights(DMatrix::zeros(5, 2), 2.0).unwrap();
        let rows = vec![vec![1, -1, 1, 1, -1], vec![-1, -1, -1, 1, 1]];
        let data = BinaryDataset::from_rows(&rows, vec![0, 1], Split::Synthetic).unwrap();
        let ll = log_likelihood(&rbm, &data, &ln_z_enumerate(&rbm).unwrap()).unwrap();
        assert!((ll + 5.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn likelihood_matches_direct_probabilities() {
        let rbm = random_rbm(8, 2, 0.7, 5);
        let ln_z = ln_z_enumerate(&rbm).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let rows: Vec<Vec<i8>> = (0..40).map(|_| (0..8).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect()).collect();
        let data = BinaryDataset::from_rows(&rows, vec![0; 40], Split::Synthetic).unwrap();
        // direct: p(s) = Σ_h-marginal weight / Z from the naive state sum
        let all: Vec<f64> = (0..1 << 8).map(|c| rbm.visible_log_weight(&spins_from_code(c, 8))).collect();
        let z = log_sum_exp(&all);
        let direct = rows.iter().map(|s| rbm.visible_log_weight(s) - z).sum::<f64>() / 40.0;
        assert!((log_likelihood(&rbm, &data, &ln_z).unwrap() - direct).abs() < 1e-10);
        let shifted = LnZEstimate { value: ln_z.value + 1.0, ..ln_z.clone() };
        let d = log_likelihood(&rbm, &data, &ln_z).unwrap() - log_likelihood(&rbm, &data, &shifted).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
    }
}
