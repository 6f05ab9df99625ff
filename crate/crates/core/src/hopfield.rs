//! Projection-rule and Hebbian Hopfield networks and their dynamics.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::data_io::{BinaryDataset, ModelArchive, ModelKind};
use crate::error::{Error, Result};
use crate::linalg;
use crate::patterns::PatternMatrix;
use crate::scalar::{log_sum_exp, Real};
use crate::seeding;

/// Largest network size accepted by exhaustive enumeration.
pub const MAX_ENUMERATION_SPINS: usize = 20;

/// Pairwise ±1 spin system `H(s) = -½ sᵀJs - bᵀs` at inverse temperature `β`.
///
/// When the couplings come from a low-rank factor `J = UUᵀ` the factor is
/// kept so that local fields cost `O(Np)` instead of `O(N²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HopfieldNetwork<T: Real> {
    couplings: DMatrix<T>,
    bias: DVector<T>,
    beta: T,
    factor: Option<DMatrix<T>>,
    zero_diagonal: bool,
}

impl<T: Real> HopfieldNetwork<T> {
    /// Network with explicit couplings; `J` must be square and symmetric to 1e-12.
    pub fn new(couplings: DMatrix<T>, bias: DVector<T>, beta: T) -> Result<Self> {
        let n = couplings.nrows();
        if couplings.ncols() != n || bias.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "couplings {}x{} with bias of length {}",
                n,
                couplings.ncols(),
                bias.len()
            )));
        }
        let asym = (&couplings - couplings.transpose()).amax();
        if asym > T::lit(1e-12).max(T::default_epsilon_scale()) {
            return Err(Error::InvalidConfig(format!("couplings are not symmetric (max |J - Jᵀ| = {asym})")));
        }
        check_beta(beta)?;
        Ok(Self { couplings, bias, beta, factor: None, zero_diagonal: false })
    }

    /// Network with `J = UUᵀ`.
    pub fn from_factor(factor: DMatrix<T>, bias: DVector<T>, beta: T) -> Result<Self> {
        let couplings = &factor * factor.transpose();
        let mut net = Self::new(couplings, bias, beta)?;
        net.factor = Some(factor);
        Ok(net)
    }

    pub fn n(&self) -> usize {
        self.couplings.nrows()
    }

    pub fn couplings(&self) -> &DMatrix<T> {
        &self.couplings
    }

    pub fn bias(&self) -> &DVector<T> {
        &self.bias
    }

    pub fn beta(&self) -> T {
        self.beta
    }

    pub fn factor(&self) -> Option<&DMatrix<T>> {
        self.factor.as_ref()
    }

    pub fn with_beta(mut self, beta: T) -> Result<Self> {
        check_beta(beta)?;
        self.beta = beta;
        Ok(self)
    }

    pub fn with_bias(mut self, bias: DVector<T>) -> Result<Self> {
        if bias.len() != self.n() {
            return Err(Error::DimensionMismatch("bias length differs from network size".into()));
        }
        self.bias = bias;
        Ok(self)
    }

    /// Removes the self-interactions `J_ii`.
    pub fn with_zero_diagonal(mut self) -> Self {
        self.couplings.fill_diagonal(T::zero());
        self.zero_diagonal = true;
        self
    }

    /// Hopfield archive with `J` and `b`, plus `xi` (and its column classes) when given.
    pub fn to_archive(&self, xi: Option<&PatternMatrix>) -> ModelArchive {
        let p = xi.map_or(0, PatternMatrix::p);
        let mut a = ModelArchive::new(ModelKind::Hopfield, self.n(), p, self.beta.as_f64())
            .with_matrix("J", &self.couplings)
            .with_matrix("b", &DMatrix::from_column_slice(self.n(), 1, self.bias.as_slice()));
        if let Some(xi) = xi {
            a.insert_matrix("xi", &xi.as_matrix::<f64>());
            let classes: Vec<String> = xi.class_of_column().iter().map(u8::to_string).collect();
            a.metadata.insert("classes".into(), classes.join(","));
        }
        a
    }

    pub fn from_archive(archive: &ModelArchive) -> Result<Self> {
        if archive.kind != ModelKind::Hopfield {
            return Err(Error::SchemaMismatch(format!("expected a hopfield archive, found {:?}", archive.kind)));
        }
        archive.validate()?;
        let bias = match archive.matrices.get("b") {
            Some(b) => DVector::from_iterator(archive.n, b.data.iter().map(|&v| T::lit(v))),
            None => DVector::zeros(archive.n),
        };
        Self::new(archive.matrix("J")?, bias, T::lit(archive.beta))
    }

    /// Local fields `Js + b`.
    pub fn local_fields(&self, s: &[i8]) -> DVector<T> {
        let sv = spins_to_vector::<T>(s);
        let mut h = match &self.factor {
            Some(u) => {
                let mut h = u * (u.transpose() * &sv);
                if self.zero_diagonal {
                    for (i, hi) in h.iter_mut().enumerate() {
                        *hi -= u.row(i).norm_squared() * sv[i];
                    }
                }
                h
            }
            None => &self.couplings * &sv,
        };
        h += &self.bias;
        h
    }
}

fn check_beta<T: Real>(beta: T) -> Result<()> {
    if beta > T::zero() && beta.as_f64().is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("inverse temperature must be positive, got {beta}")))
    }
}

pub(crate) fn spins_to_vector<T: Real>(s: &[i8]) -> DVector<T> {
    DVector::from_iterator(s.len(), s.iter().map(|&v| T::from_spin(v)))
}

/// `M (MᵀM)⁻¹ Mᵀ`, the orthogonal projector onto the column space of `M`.
pub fn projection_matrix<T: Real>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    linalg::check_full_column_rank(m, linalg::PATTERN_RANK_TOL)?;
    let inv = linalg::inv_spd(&(m.transpose() * m))?;
    let j = m * inv * m.transpose();
    // symmetrize away rounding
    Ok((&j + j.transpose()) * T::lit(0.5))
}

/// Projection (pseudo-inverse) rule `J = ξ(ξᵀξ)⁻¹ξᵀ`, zero bias, `β = 1`.
pub fn projection_couplings<T: Real>(xi: &PatternMatrix) -> Result<HopfieldNetwork<T>> {
    let m = xi.as_matrix::<T>();
    let j = projection_matrix(&m)?;
    let factor = &m * linalg::inv_sqrt_spd(&(m.transpose() * &m))?;
    let n = xi.n();
    let mut net = HopfieldNetwork::new(j, DVector::zeros(n), T::one())?;
    net.factor = Some(factor);
    Ok(net)
}

/// Hebbian rule `J = ξξᵀ/N`, zero bias, `β = 1`.
pub fn hebbian_couplings<T: Real>(xi: &PatternMatrix) -> HopfieldNetwork<T> {
    let n = xi.n();
    let u = xi.as_matrix::<T>() / T::count(n).sqrt();
    HopfieldNetwork::from_factor(u, DVector::zeros(n), T::one()).expect("Hebbian couplings are symmetric")
}

/// `H(s) = -½ sᵀJs - bᵀs`.
pub fn energy<T: Real>(net: &HopfieldNetwork<T>, s: &[i8]) -> T {
    let sv = spins_to_vector::<T>(s);
    -(net.couplings() * &sv).dot(&sv) * T::lit(0.5) - net.bias().dot(&sv)
}

/// Overlap `m = ξᵀs/N`, projection `a = (ξᵀξ)⁻¹ξᵀs` and overlap matrix `A = ξᵀξ`.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapState<T: Real> {
    pub m: DVector<T>,
    pub a: DVector<T>,
    pub overlap_matrix: DMatrix<T>,
}

pub fn overlaps<T: Real>(xi: &PatternMatrix, s: &[i8]) -> Result<OverlapState<T>> {
    let x = xi.as_matrix::<T>();
    linalg::check_full_column_rank(&x, linalg::PATTERN_RANK_TOL)?;
    let sv = spins_to_vector::<T>(s);
    let xts = x.transpose() * sv;
    let overlap_matrix = x.transpose() * &x;
    let chol = overlap_matrix.clone().cholesky().ok_or(Error::RankDeficient { ratio: 0.0 })?;
    let a = chol.solve(&xts);
    let m = xts / T::count(xi.n());
    Ok(OverlapState { m, a, overlap_matrix })
}

/// Synchronous zero-temperature update `s' = sgn(Js + b)`; a zero field keeps the current spin.
pub fn update_deterministic<T: Real>(net: &HopfieldNetwork<T>, s: &[i8]) -> Vec<i8> {
    let h = net.local_fields(s);
    h.iter()
        .zip(s)
        .map(|(&hi, &si)| {
            if hi > T::zero() {
                1
            } else if hi < T::zero() {
                -1
            } else {
                si
            }
        })
        .collect()
}

/// Asynchronous zero-temperature sweep over `order`, using the freshest spins at each site.
pub fn update_async_deterministic<T: Real>(net: &HopfieldNetwork<T>, s: &[i8], order: &[usize]) -> Vec<i8> {
    let mut s = s.to_vec();
    let j = net.couplings();
    for &i in order {
        let h = (0..s.len()).fold(net.bias()[i], |acc, k| acc + j[(i, k)] * T::from_spin(s[k]));
        if h > T::zero() {
            s[i] = 1;
        } else if h < T::zero() {
            s[i] = -1;
        }
    }
    s
}

/// Single-site acceptance rule for the stochastic dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpinRule {
    /// Heat bath: `P(s_i = +1) = 1 / (1 + e^{-2βh_i})`.
    #[default]
    Glauber,
    /// Flip with probability `min(1, e^{-βΔH})`.
    Metropolis,
}

/// Single-site stochastic sampler of `e^{-βH}` holding the state and its local fields.
///
/// The field used at site `i` excludes the self-interaction `J_ii s_i`, which
/// is constant under a flip and so does not enter the conditional distribution.
pub struct SpinSampler<'a, T: Real> {
    net: &'a HopfieldNetwork<T>,
    beta: T,
    rule: SpinRule,
    state: Vec<i8>,
    /// `Uᵀs` when a factor is available, otherwise `Js`.
    cache: DVector<T>,
    diag: Vec<T>,
    order: Vec<usize>,
}

impl<'a, T: Real> SpinSampler<'a, T> {
    pub fn new(net: &'a HopfieldNetwork<T>, s: &[i8], beta: T, rule: SpinRule) -> Self {
        let sv = spins_to_vector::<T>(s);
        let (cache, diag) = match net.factor() {
            Some(u) => (u.transpose() * &sv, (0..net.n()).map(|i| u.row(i).norm_squared()).collect()),
            None => (net.couplings() * &sv, net.couplings().diagonal().iter().copied().collect()),
        };
        Self { net, beta, rule, state: s.to_vec(), cache, diag, order: (0..s.len()).collect() }
    }

    pub fn state(&self) -> &[i8] {
        &self.state
    }

    /// Field at site `i` without the self-interaction.
    #[inline]
    fn field(&self, i: usize) -> T {
        let si = T::from_spin(self.state[i]);
        let raw = match self.net.factor() {
            Some(u) => u.row(i).transpose().dot(&self.cache),
            None => self.cache[i],
        };
        raw - self.diag[i] * si + self.net.bias()[i]
    }

    fn flip(&mut self, i: usize) {
        let new = -self.state[i];
        self.state[i] = new;
        let delta = T::lit(2.0) * T::from_spin(new);
        match self.net.factor() {
            Some(u) => self.cache.axpy(delta, &u.row(i).transpose(), T::one()),
            None => self.cache.axpy(delta, &self.net.couplings().column(i), T::one()),
        }
    }

    /// One sweep of single-site updates in a fresh uniformly random order.
    pub fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let mut order = std::mem::take(&mut self.order);
        order.shuffle(rng);
        for &i in &order {
            let h = self.field(i);
            let u: f64 = rng.random();
            let two_beta_h = (T::lit(2.0) * self.beta * h).as_f64();
            let flip = match self.rule {
                SpinRule::Glauber => {
                    let up = u < 1.0 / (1.0 + (-two_beta_h).exp());
                    up != (self.state[i] > 0)
                }
                SpinRule::Metropolis => {
                    let delta_e = two_beta_h * self.state[i] as f64;
                    delta_e <= 0.0 || u < (-delta_e).exp()
                }
            };
            if flip {
                self.flip(i);
            }
        }
        self.order = order;
    }
}

/// One asynchronous Glauber sweep at the network's inverse temperature.
pub fn update_stochastic<T: Real, R: Rng + ?Sized>(net: &HopfieldNetwork<T>, s: &[i8], rng: &mut R) -> Vec<i8> {
    let mut sampler = SpinSampler::new(net, s, net.beta(), SpinRule::Glauber);
    sampler.sweep(rng);
    sampler.state
}

/// Exact `ln Σ_s e^{-βH(s)}` by summing all `2^N` states.
pub fn log_partition_enumerate<T: Real>(net: &HopfieldNetwork<T>) -> Result<T> {
    let n = net.n();
    if n > MAX_ENUMERATION_SPINS {
        return Err(Error::TooLarge { method: "enumeration", limit: MAX_ENUMERATION_SPINS, actual: n });
    }
    let terms: Vec<T> = (0..1usize << n).map(|code| -net.beta() * energy(net, &spins_from_code(code, n))).collect();
    Ok(log_sum_exp(&terms))
}

/// State number `code` in the enumeration order: bit `i` set means `s_i = +1`.
pub fn spins_from_code(code: usize, n: usize) -> Vec<i8> {
    (0..n).map(|i| if code >> i & 1 == 1 { 1 } else { -1 }).collect()
}

/// Parameters of the associative-memory retrieval protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalConfig {
    pub beta: f64,
    pub ensemble: usize,
    pub threshold: f64,
    pub max_sweeps: usize,
    pub max_deterministic_sweeps: usize,
    pub rule: SpinRule,
    pub seed: u64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            beta: 2.0,
            ensemble: 20,
            threshold: 0.7,
            max_sweeps: 100,
            max_deterministic_sweeps: 100,
            rule: SpinRule::Glauber,
            seed: 0,
        }
    }
}

/// Outcome of retrieving one initial state.
#[derive(Debug, Clone, PartialEq)]
pub enum Retrieval {
    /// The deterministic dynamics ended exactly on (the negation of) a stored pattern.
    Fixed { class: u8, pattern: usize },
    /// Class histogram from the stochastic ensemble (each trajectory adds `1/n`).
    Ensemble { class: u8, histogram: Vec<f64> },
    NoRetrieval,
}

impl Retrieval {
    pub fn class(&self) -> Option<u8> {
        match self {
            Retrieval::Fixed { class, .. } | Retrieval::Ensemble { class, .. } => Some(*class),
            Retrieval::NoRetrieval => None,
        }
    }

    /// Weight this outcome contributes to each class of a retrieval table.
    pub fn weights(&self, n_classes: usize) -> Vec<f64> {
        let mut w = vec![0.0; n_classes];
        match self {
            Retrieval::Fixed { class, .. } => w[*class as usize] = 1.0,
            Retrieval::Ensemble { histogram, .. } => {
                for (dst, &src) in w.iter_mut().zip(histogram) {
                    *dst = src;
                }
            }
            Retrieval::NoRetrieval => {}
        }
        w
    }
}

/// Index of the pattern with the largest overlap `N⁻¹ sᵀ ξ^μ`, with that overlap.
fn best_overlap(xi: &PatternMatrix, s: &[i8]) -> (usize, f64) {
    let n = s.len() as f64;
    (0..xi.p())
        .map(|mu| {
            let dot: i32 = xi.column(mu).iter().zip(s).map(|(&a, &b)| (a * b) as i32).sum();
            (mu, dot as f64 / n)
        })
        .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
}

/// Deterministic descent to a fixed point, then (if the fixed point is not a
/// stored pattern) an ensemble of stochastic trajectories, each stopping once
/// some pattern overlap exceeds the threshold.
pub fn retrieve<T: Real>(
    net: &HopfieldNetwork<T>,
    xi: &PatternMatrix,
    s0: &[i8],
    cfg: &RetrievalConfig,
) -> Retrieval {
    let mut s = s0.to_vec();
    let mut before: Option<Vec<i8>> = None;
    let mut fixed = false;
    for _ in 0..cfg.max_deterministic_sweeps {
        let next = update_deterministic(net, &s);
        if next == s {
            fixed = true;
            break;
        }
        if before.as_deref() == Some(&next[..]) {
            // period-2 cycle: hand over to the stochastic stage
            break;
        }
        before = Some(std::mem::replace(&mut s, next));
    }
    if fixed {
        for mu in 0..xi.p() {
            let col = xi.column(mu);
            if col == &s[..] || col.iter().zip(&s).all(|(&a, &b)| a == -b) {
                return Retrieval::Fixed { class: xi.class_of_column()[mu], pattern: mu };
            }
        }
    }

    let n_classes = xi.class_of_column().iter().map(|&c| c as usize + 1).max().unwrap_or(0);
    let mut histogram = vec![0.0; n_classes];
    let mut any = false;
    let beta = T::lit(cfg.beta);
    for t in 0..cfg.ensemble {
        let mut rng = seeding::stream(cfg.seed, &[t as u64]);
        let mut sampler = SpinSampler::new(net, &s, beta, cfg.rule);
        for sweep in 0..=cfg.max_sweeps {
            let (mu, m) = best_overlap(xi, sampler.state());
            if m > cfg.threshold {
                histogram[xi.class_of_column()[mu] as usize] += 1.0 / cfg.ensemble as f64;
                any = true;
                break;
            }
            if sweep < cfg.max_sweeps {
                sampler.sweep(&mut rng);
            }
        }
    }
    if !any {
        return Retrieval::NoRetrieval;
    }
    let class = histogram
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (c, &w)| if w > best.1 { (c, w) } else { best })
        .0 as u8;
    Retrieval::Ensemble { class, histogram }
}

/// Retrieval results over a labelled dataset: `weights[true_class][retrieved_class]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalTable {
    pub weights: Vec<Vec<f64>>,
    pub counts: Vec<usize>,
    pub no_retrieval: usize,
    /// Fraction of samples whose argmax class equals their label.
    pub accuracy: f64,
    /// Mean weight assigned to the correct class.
    pub mean_correct_weight: f64,
}

/// Runs [`retrieve`] on every sample; sample `a` uses RNG streams under `derive_seed(seed, [a])`.
pub fn retrieval_table<T: Real>(
    net: &HopfieldNetwork<T>,
    xi: &PatternMatrix,
    data: &BinaryDataset,
    cfg: &RetrievalConfig,
) -> RetrievalTable {
    let n_classes = data.n_classes().max(xi.class_of_column().iter().map(|&c| c as usize + 1).max().unwrap_or(0));
    let outcomes: Vec<Retrieval> = (0..data.len())
        .into_par_iter()
        .map(|a| {
            let cfg = RetrievalConfig { seed: seeding::derive_seed(cfg.seed, &[a as u64]), ..cfg.clone() };
            retrieve(net, xi, data.sample(a), &cfg)
        })
        .collect();
    let mut weights = vec![vec![0.0; n_classes]; n_classes];
    let mut counts = vec![0usize; n_classes];
    let (mut correct, mut no_retrieval, mut correct_weight) = (0usize, 0usize, 0.0);
    for (a, outcome) in outcomes.iter().enumerate() {
        let label = data.label(a) as usize;
        counts[label] += 1;
        let w = outcome.weights(n_classes);
        correct_weight += w[label];
        for (dst, src) in weights[label].iter_mut().zip(&w) {
            *dst += src;
        }
        match outcome.class() {
            Some(c) if c as usize == label => correct += 1,
            None => no_retrieval += 1,
            _ => {}
        }
    }
    let total = data.len().max(1) as f64;
    RetrievalTable {
        weights,
        counts,
        no_retrieval,
        accuracy: correct as f64 / total,
        mean_correct_weight: correct_weight / total,
    }
}

/// Patterns stored in an archive as `xi`, with classes from the `classes`
/// metadata (column index when absent).
pub fn patterns_from_archive(archive: &ModelArchive) -> Result<PatternMatrix> {
    archive.validate()?;
    let m = archive.matrix::<f64>("xi")?;
    let classes = match archive.meta("classes") {
        Some(list) => list
            .split(',')
            .map(|c| c.trim().parse::<u8>().map_err(|_| Error::SchemaMismatch(format!("bad class label {c:?}"))))
            .collect::<Result<Vec<u8>>>()?,
        None => (0..m.ncols()).map(|c| c as u8).collect(),
    };
    if m.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::SchemaMismatch("xi must hold only ±1 entries".into()));
    }
    PatternMatrix::from_signs(&m, classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn pm(cols: &[&[i8]]) -> PatternMatrix {
        PatternMatrix::new(cols.iter().map(|c| c.to_vec()).collect(), (0..cols.len() as u8).collect()).unwrap()
    }

    fn random_patterns(n: usize, p: usize, seed: u64) -> PatternMatrix {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        loop {
            // bias towards +1 so the patterns are correlated
            let cols: Vec<Vec<i8>> =
                (0..p).map(|_| (0..n).map(|_| if rng.random::<f64>() < 0.7 { 1 } else { -1 }).collect()).collect();
            let xi = PatternMatrix::new(cols, (0..p as u8).collect()).unwrap();
            if xi.check_rank().is_ok() {
                return xi;
            }
        }
    }

    #[test]
    fn square_invertible_patterns_give_identity() {
        let xi = pm(&[&[1, 1, 1], &[1, -1, 1], &[1, 1, -1]]);
        let net = projection_couplings::<f64>(&xi).unwrap();
        assert!((net.couplings() - DMatrix::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn orthogonal_patterns_reduce_to_hebbian() {
        let xi = pm(&[&[1, 1, 1, 1], &[1, -1, 1, -1]]);
        let proj = projection_couplings::<f64>(&xi).unwrap();
        let hebb = hebbian_couplings::<f64>(&xi);
        let x = xi.as_matrix::<f64>();
        assert!((proj.couplings() - &x * x.transpose() / 4.0).norm() < 1e-12);
        assert!((proj.couplings() - hebb.couplings()).norm() < 1e-12);
    }

    #[test]
    fn single_pattern_hebbian_entries() {
        let xi = pm(&[&[1, -1, 1, 1, -1]]);
        let j = hebbian_couplings::<f64>(&xi);
        for i in 0..5 {
            assert!((j.couplings()[(i, i)] - 0.2).abs() < 1e-15);
            for k in 0..5 {
                let want = (xi.column(0)[i] * xi.column(0)[k]) as f64 / 5.0;
                assert!((j.couplings()[(i, k)] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn projection_identities_on_correlated_patterns() {
        let xi = random_patterns(10, 4, 1);
        let net = projection_couplings::<f64>(&xi).unwrap();
        let j = net.couplings();
        assert!((j * j - j).norm() < 1e-10);
        assert!((j.trace() - 4.0).abs() < 1e-10);
        let x = xi.as_matrix::<f64>();
        assert!((j * &x - &x).norm() < 1e-10);
        let hebb = hebbian_couplings::<f64>(&xi);
        assert!((hebb.couplings() - j).norm() > 1e-3);
    }

    #[test]
    fn energy_at_patterns_and_orthogonal_states() {
        let xi = random_patterns(12, 3, 2);
        let net = projection_couplings::<f64>(&xi).unwrap();
        for mu in 0..3 {
            assert!((energy(&net, xi.column(mu)) + 6.0).abs() < 1e-10);
        }
        let xi = pm(&[&[1, 1, 1, 1]]);
        let net = projection_couplings::<f64>(&xi).unwrap();
        assert!(energy(&net, &[1, -1, 1, -1]).abs() < 1e-14);
    }

    #[test]
    fn energy_matches_overlap_form() {
        let xi = random_patterns(8, 3, 3);
        let net = projection_couplings::<f64>(&xi).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let s: Vec<i8> = (0..8).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
            let o = overlaps::<f64>(&xi, &s).unwrap();
            // a verified against an independent LU solve
            let x = xi.as_matrix::<f64>();
            let direct = (x.transpose() * &x).lu().solve(&(x.transpose() * spins_to_vector::<f64>(&s))).unwrap();
            assert!((&o.a - direct).norm() < 1e-10);
            assert!((energy(&net, &s) + 4.0 * o.m.dot(&o.a)).abs() < 1e-10);
        }
    }

    #[test]
    fn stored_pattern_projection_is_unit_vector() {
        let xi = random_patterns(9, 3, 5);
        for mu in 0..3 {
            let o = overlaps::<f64>(&xi, xi.column(mu)).unwrap();
            let neg: Vec<i8> = xi.column(mu).iter().map(|v| -v).collect();
            let on = overlaps::<f64>(&xi, &neg).unwrap();
            for nu in 0..3 {
                let e = if mu == nu { 1.0 } else { 0.0 };
                assert!((o.a[nu] - e).abs() < 1e-10);
                assert!((on.a[nu] + e).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn deterministic_fixed_points_and_ties() {
        let xi = random_patterns(20, 2, 6);
        let net = projection_couplings::<f64>(&xi).unwrap();
        for mu in 0..2 {
            assert_eq!(update_deterministic(&net, xi.column(mu)), xi.column(mu));
        }
        let zero = HopfieldNetwork::new(DMatrix::<f64>::zeros(4, 4), DVector::zeros(4), 1.0).unwrap();
        assert_eq!(update_deterministic(&zero, &[1, -1, -1, 1]), vec![1, -1, -1, 1]);
    }

    #[test]
    fn one_flipped_bit_returns_to_pattern() {
        let xi = random_patterns(20, 2, 7);
        let net = projection_couplings::<f64>(&xi).unwrap();
        for i in 0..20 {
            let mut s = xi.column(0).to_vec();
            s[i] = -s[i];
            let mut reached = false;
            for _ in 0..5 {
                s = update_deterministic(&net, &s);
                if s == xi.column(0) {
                    reached = true;
                    break;
                }
            }
            assert!(reached, "bit {i} did not return");
        }
    }

    #[test]
    fn low_temperature_matches_deterministic_rule() {
        let xi = random_patterns(16, 3, 8);
        let net = projection_couplings::<f64>(&xi).unwrap().with_beta(1e6).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for mu in 0..3 {
            assert_eq!(update_stochastic(&net, xi.column(mu), &mut rng), xi.column(mu));
        }
    }

    #[test]
    fn infinite_temperature_is_unbiased() {
        let xi = random_patterns(6, 2, 10);
        let net = projection_couplings::<f64>(&xi).unwrap();
        let mut sampler = SpinSampler::new(&net, xi.column(0), 0.0, SpinRule::Glauber);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut sums = [0i64; 6];
        let sweeps = 10_000;
        for _ in 0..sweeps {
            sampler.sweep(&mut rng);
            for (acc, &v) in sums.iter_mut().zip(sampler.state()) {
                *acc += v as i64;
            }
        }
        for s in sums {
            assert!((s as f64 / sweeps as f64).abs() < 0.05);
        }
    }

    fn total_variation_to_boltzmann(net: &HopfieldNetwork<f64>, rule: SpinRule, seed: u64) -> f64 {
        let n = net.n();
        let ln_z = log_partition_enumerate(net).unwrap();
        let exact: Vec<f64> =
            (0..1usize << n).map(|c| (-net.beta() * energy(net, &spins_from_code(c, n)) - ln_z).exp()).collect();
        let mut counts = vec![0usize; 1 << n];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut sampler = SpinSampler::new(net, &vec![1; n], net.beta(), rule);
        for _ in 0..100 {
            sampler.sweep(&mut rng);
        }
        let sweeps = 200_000;
        for _ in 0..sweeps {
            sampler.sweep(&mut rng);
            let code = sampler.state().iter().enumerate().fold(0, |c, (i, &v)| c | (((v > 0) as usize) << i));
            counts[code] += 1;
        }
        0.5 * counts.iter().zip(&exact).map(|(&c, &p)| (c as f64 / sweeps as f64 - p).abs()).sum::<f64>()
    }

    #[test]
    fn glauber_samples_boltzmann_distribution() {
        let xi = random_patterns(8, 2, 12);
        let net = projection_couplings::<f64>(&xi).unwrap().with_beta(2.0).unwrap();
        let tv = total_variation_to_boltzmann(&net, SpinRule::Glauber, 13);
        assert!(tv < 0.02, "total variation {tv}");
        // the dense path (no factor) must sample the same distribution
        let dense = HopfieldNetwork::new(net.couplings().clone(), DVector::from_element(8, 0.1), 2.0).unwrap();
        assert!(total_variation_to_boltzmann(&dense, SpinRule::Metropolis, 14) < 0.02);
    }

    #[test]
    fn enumeration_guard() {
        let big = HopfieldNetwork::new(DMatrix::<f64>::zeros(21, 21), DVector::zeros(21), 1.0).unwrap();
        assert!(matches!(log_partition_enumerate(&big), Err(Error::TooLarge { .. })));
        let small = HopfieldNetwork::new(DMatrix::<f64>::zeros(5, 5), DVector::zeros(5), 1.0).unwrap();
        assert!((log_partition_enumerate(&small).unwrap() - 5.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn retrieval_of_stored_pattern_is_exact() {
        let xi = random_patterns(30, 3, 15);
        let net = projection_couplings::<f64>(&xi).unwrap();
        let r = retrieve(&net, &xi, xi.column(2), &RetrievalConfig::default());
        assert_eq!(r, Retrieval::Fixed { class: 2, pattern: 2 });
        assert_eq!(r.weights(3), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn state_far_from_patterns_is_not_confidently_retrieved() {
        // one pattern; the start is orthogonal to it, so its field vanishes and
        // the overlap threshold is never reached at high temperature
        let xi = pm(&[&[1, 1, 1, 1, 1, 1, 1, 1]]);
        let net = projection_couplings::<f64>(&xi).unwrap();
        let cfg = RetrievalConfig { beta: 0.01, threshold: 0.99, max_sweeps: 3, ensemble: 5, ..Default::default() };
        let r = retrieve(&net, &xi, &[1, -1, 1, -1, 1, -1, 1, -1], &cfg);
        match r {
            Retrieval::NoRetrieval => {}
            Retrieval::Ensemble { histogram, .. } => assert!(histogram[0] < 1.0),
            Retrieval::Fixed { .. } => panic!("orthogonal state cannot be a stored pattern"),
        }
    }
}
