//! Binary-visible, gaussian-hidden RBM with block Gibbs sampling and CD-k training.

mod train;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data_io::{ModelArchive, ModelKind};
use crate::error::{Error, Result};
use crate::hopfield::spins_to_vector;
use crate::scalar::{sgn_plus, Real};

pub use train::{
    cd_k_gradient, cd_gradient_from, train, CdOptions, CdStatistics, EpochReport, TrainConfig,
};

/// `H(s, λ) = ½ Σ_μ (λ_μ − c_μ)² − bᵀs − sᵀWλ` with `s ∈ {±1}^N`, `λ ∈ ℝ^p`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussBernRbm<T: Real> {
    pub w: DMatrix<T>,
    pub b: DVector<T>,
    pub c: DVector<T>,
    pub beta: T,
}

impl<T: Real> GaussBernRbm<T> {
    pub fn new(w: DMatrix<T>, b: DVector<T>, c: DVector<T>, beta: T) -> Result<Self> {
        let (n, p) = w.shape();
        if n == 0 || p == 0 {
            return Err(Error::InvalidConfig("an RBM needs at least one visible and one hidden unit".into()));
        }
        if b.len() != n || c.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "W is {n}x{p} but b has {} and c has {} entries",
                b.len(),
                c.len()
            )));
        }
        if !(beta > T::zero()) {
            return Err(Error::InvalidConfig(format!("inverse temperature must be positive, got {beta}")));
        }
        let finite = |v: &T| v.as_f64().is_finite();
        if !(w.iter().all(finite) && b.iter().all(finite) && c.iter().all(finite) && finite(&beta)) {
            return Err(Error::InvalidConfig("RBM parameters must be finite".into()));
        }
        Ok(Self { w, b, c, beta })
    }

    /// Zero biases.
    pub fn from_weights(w: DMatrix<T>, beta: T) -> Result<Self> {
        let (n, p) = w.shape();
        Self::new(w, DVector::zeros(n), DVector::zeros(p), beta)
    }

    /// `W_{iμ} ~ N(0, std²)`, zero biases.
    pub fn random<R: Rng + ?Sized>(n: usize, p: usize, std: f64, beta: T, rng: &mut R) -> Result<Self> {
        let w = DMatrix::from_fn(n, p, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            T::lit(std * z)
        });
        Self::from_weights(w, beta)
    }

    pub fn n_visible(&self) -> usize {
        self.w.nrows()
    }

    pub fn n_hidden(&self) -> usize {
        self.w.ncols()
    }

    /// `E[λ | s] = Wᵀs + c`.
    pub fn mean_hidden(&self, s: &[i8]) -> DVector<T> {
        self.w.tr_mul(&spins_to_vector::<T>(s)) + &self.c
    }

    /// `λ_μ ~ N(h_μ, 1/β)`.
    pub fn sample_hidden<R: Rng + ?Sized>(&self, s: &[i8], rng: &mut R) -> DVector<T> {
        let mut lambda = self.mean_hidden(s);
        self.add_hidden_noise(&mut lambda, rng);
        lambda
    }

    pub(crate) fn add_hidden_noise<R: Rng + ?Sized>(&self, lambda: &mut DVector<T>, rng: &mut R) {
        let sd = T::one() / self.beta.sqrt();
        for v in lambda.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v += sd * T::lit(z);
        }
    }

    /// `x = Wλ + b`.
    pub fn visible_field(&self, lambda: &DVector<T>) -> DVector<T> {
        &self.w * lambda + &self.b
    }

    /// `P(s_i = +1 | λ) = 1 / (1 + e^{−2βx_i})`.
    pub fn visible_probabilities(&self, lambda: &DVector<T>) -> DVector<T> {
        let two_beta = T::lit(2.0) * self.beta;
        self.visible_field(lambda).map(|x| T::one() / (T::one() + (-two_beta * x).exp()))
    }

    pub fn sample_visible<R: Rng + ?Sized>(&self, lambda: &DVector<T>, rng: &mut R) -> Vec<i8> {
        sample_spins(&self.visible_field(lambda), self.beta, rng)
    }

    /// `H(s, λ)`.
    pub fn energy(&self, s: &[i8], lambda: &DVector<T>) -> T {
        let sv = spins_to_vector::<T>(s);
        (lambda - &self.c).norm_squared() * T::lit(0.5) - self.b.dot(&sv) - (&self.w * lambda).dot(&sv)
    }

    /// `ln ∫ (β/2π)^{p/2} e^{−βH(s,λ)} dλ = β bᵀs + β/2 ‖c + Wᵀs‖² − β/2 ‖c‖²`,
    /// the unnormalized visible log-marginal whose sum over `s` is `Z`.
    pub fn visible_log_weight(&self, s: &[i8]) -> T {
        let sv = spins_to_vector::<T>(s);
        let half_beta = self.beta * T::lit(0.5);
        self.beta * self.b.dot(&sv) + half_beta * ((self.w.tr_mul(&sv) + &self.c).norm_squared() - self.c.norm_squared())
    }

    /// Serializes into a model archive of kind `rbm`.
    pub fn to_archive(&self) -> ModelArchive {
        ModelArchive::new(ModelKind::Rbm, self.n_visible(), self.n_hidden(), self.beta.as_f64())
            .with_matrix("W", &self.w)
            .with_matrix("b", &DMatrix::from_column_slice(self.b.len(), 1, self.b.as_slice()))
            .with_matrix("c", &DMatrix::from_column_slice(self.c.len(), 1, self.c.as_slice()))
    }

    pub fn from_archive(archive: &ModelArchive) -> Result<Self> {
        if archive.kind != ModelKind::Rbm {
            return Err(Error::SchemaMismatch(format!("expected an rbm archive, found {:?}", archive.kind)));
        }
        archive.validate()?;
        let w = archive.matrix::<T>("W")?;
        let (n, p) = w.shape();
        let column = |name: &str, len: usize| -> Result<DVector<T>> {
            match archive.matrices.contains_key(name) {
                true => Ok(DVector::from_column_slice(archive.matrix::<T>(name)?.as_slice())),
                false => Ok(DVector::zeros(len)),
            }
        };
        Self::new(w, column("b", n)?, column("c", p)?, T::lit(archive.beta))
    }
}

/// Independent ±1 draws with `P(+1) = 1 / (1 + e^{−2βx_i})`.
pub(crate) fn sample_spins<T: Real, R: Rng + ?Sized>(x: &DVector<T>, beta: T, rng: &mut R) -> Vec<i8> {
    let two_beta = (T::lit(2.0) * beta).as_f64();
    x.iter()
        .map(|&xi| {
            let p_up = 1.0 / (1.0 + (-two_beta * xi.as_f64()).exp());
            if rng.random::<f64>() < p_up {
                1
            } else {
                -1
            }
        })
        .collect()
}

/// Runs `steps` alternating block-Gibbs updates `s → λ → s` from `s0`.
pub fn generate_samples<T: Real, R: Rng + ?Sized>(
    rbm: &GaussBernRbm<T>,
    s0: &[i8],
    steps: usize,
    rng: &mut R,
) -> Vec<i8> {
    let mut s = s0.to_vec();
    for _ in 0..steps {
        let lambda = rbm.sample_hidden(&s, rng);
        s = rbm.sample_visible(&lambda, rng);
    }
    s
}

/// Zero-temperature readout `sgn(W E[λ|s] + b)`.
pub fn mean_field_visible<T: Real>(rbm: &GaussBernRbm<T>, s: &[i8]) -> Vec<i8> {
    rbm.visible_field(&rbm.mean_hidden(s)).iter().map(|&x| sgn_plus(x)).collect()
}
