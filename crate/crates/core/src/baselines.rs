//! Weight initializations: Hopfield (QR of the patterns), Hebbian, PCA and random.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, Normal};

use crate::data_io::BinaryDataset;
use crate::error::{Error, Result};
use crate::forward_map::qr_positive;
use crate::linalg;
use crate::patterns::PatternMatrix;
use crate::scalar::Real;
use crate::seeding;

/// Scale of the random initialization, used as the standard deviation.
pub const RANDOM_INIT_STD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InitKind {
    HopfieldQr,
    Hebbian,
    Pca,
    Random,
}

impl InitKind {
    pub const ALL: [InitKind; 4] = [InitKind::HopfieldQr, InitKind::Hebbian, InitKind::Pca, InitKind::Random];

    /// Whether the initialization is built from stored patterns.
    pub fn uses_patterns(self) -> bool {
        matches!(self, InitKind::HopfieldQr | InitKind::Hebbian)
    }
}

impl FromStr for InitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hopfield" | "hopfield_qr" | "hopfield-qr" => Ok(Self::HopfieldQr),
            "hebbian" => Ok(Self::Hebbian),
            "pca" => Ok(Self::Pca),
            "random" => Ok(Self::Random),
            other => Err(Error::InvalidConfig(format!("unknown init {other:?} (expected hopfield, hebbian, pca or random)"))),
        }
    }
}

impl fmt::Display for InitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::HopfieldQr => "hopfield",
            Self::Hebbian => "hebbian",
            Self::Pca => "pca",
            Self::Random => "random",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitSpec {
    pub kind: InitKind,
    /// Number of hidden units.
    pub p: usize,
    pub seed: u64,
}

/// Initial weights with the QR triangle (for Hopfield inits) and provenance metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct InitWeights<T: Real> {
    pub w: DMatrix<T>,
    pub r: Option<DMatrix<T>>,
    pub metadata: BTreeMap<String, String>,
}

/// `W = ξ/√N`.
pub fn hebbian_init<T: Real>(xi: &PatternMatrix) -> DMatrix<T> {
    xi.as_matrix::<T>() / T::count(xi.n()).sqrt()
}

/// `(Q, R)` of the patterns with `diag(R) > 0`.
pub fn hopfield_init<T: Real>(xi: &PatternMatrix) -> Result<(DMatrix<T>, DMatrix<T>)> {
    let m = xi.as_matrix::<T>();
    linalg::check_full_column_rank(&m, linalg::PATTERN_RANK_TOL)?;
    Ok(qr_positive(&m))
}

/// Top-`p` principal directions of the mean-centred data, unit norm, with the
/// largest-magnitude entry of each made positive.
pub fn pca_init<T: Real>(data: &BinaryDataset, p: usize) -> Result<DMatrix<T>> {
    let n = data.n_visible();
    if p == 0 || p > n {
        return Err(Error::InvalidConfig(format!("PCA needs 1 <= p <= N, got p = {p} with N = {n}")));
    }
    if data.len() < p {
        return Err(Error::InvalidDataset(format!("PCA with p = {p} needs at least {p} samples, got {}", data.len())));
    }
    let m = data.len() as f64;
    let mut sums = vec![0i64; n];
    for (s, _) in data.iter() {
        for (acc, &v) in sums.iter_mut().zip(s) {
            *acc += v as i64;
        }
    }
    let mean: Vec<f64> = sums.iter().map(|&v| v as f64 / m).collect();

    const CHUNK: usize = 2048;
    let mut scatter = DMatrix::<f64>::zeros(n, n);
    let mut start = 0;
    while start < data.len() {
        let end = (start + CHUNK).min(data.len());
        let x = DMatrix::from_fn(end - start, n, |a, i| data.sample(start + a)[i] as f64 - mean[i]);
        scatter.gemm_tr(1.0, &x, &x, 1.0);
        start = end;
    }
    let cov = scatter / m;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).expect("finite eigenvalues").then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]];
    let last = eig.eigenvalues[order[p - 1]];
    if !(top > 0.0) || last <= linalg::EIGEN_RANK_TOL * top {
        return Err(Error::RankDeficient { ratio: if top > 0.0 { last / top } else { 0.0 } });
    }
    let mut w = DMatrix::<T>::zeros(n, p);
    for (col, &k) in order[..p].iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        let lead = v.iter().enumerate().fold(0, |best, (i, x)| if x.abs() > v[best].abs() { i } else { best });
        let sign = if v[lead] < 0.0 { -1.0 } else { 1.0 };
        let norm = v.norm();
        for i in 0..n {
            w[(i, col)] = T::lit(sign * v[i] / norm);
        }
    }
    Ok(w)
}

/// `W_{iμ} ~ N(0, RANDOM_INIT_STD²)` from the stream `derive_seed(seed, [])`.
pub fn random_init<T: Real>(n: usize, p: usize, seed: u64) -> DMatrix<T> {
    let mut rng = seeding::stream(seed, &[]);
    let normal = Normal::new(0.0, RANDOM_INIT_STD).expect("valid normal");
    DMatrix::from_fn(n, p, |_, _| T::lit(normal.sample(&mut rng)))
}

/// Builds initial weights. `patterns` is required for the pattern-based kinds,
/// `data` for PCA.
pub fn build_weights<T: Real>(
    spec: &InitSpec,
    n: usize,
    data: Option<&BinaryDataset>,
    patterns: Option<&PatternMatrix>,
) -> Result<InitWeights<T>> {
    let mut metadata = BTreeMap::new();
    metadata.insert("init".to_string(), spec.kind.to_string());
    let need_patterns = || {
        patterns.ok_or_else(|| Error::InvalidConfig(format!("{} init needs a pattern matrix", spec.kind)))
    };
    let (w, r) = match spec.kind {
        InitKind::HopfieldQr => {
            let (q, r) = hopfield_init(need_patterns()?)?;
            (q, Some(r))
        }
        InitKind::Hebbian => {
            let w = hebbian_init::<T>(need_patterns()?);
            let deviation = linalg::orthogonality_defect(&w).as_f64();
            metadata.insert("orthogonality_defect".into(), format!("{deviation:e}"));
            (w, None)
        }
        InitKind::Pca => {
            let data = data.ok_or_else(|| Error::InvalidConfig("pca init needs training data".into()))?;
            metadata.insert("pca_centering".into(), "mean-centred ±1 data".into());
            (pca_init(data, spec.p)?, None)
        }
        InitKind::Random => {
            metadata.insert("random_std".into(), RANDOM_INIT_STD.to_string());
            metadata.insert("seed".into(), spec.seed.to_string());
            (random_init(n, spec.p, spec.seed), None)
        }
    };
    if w.shape() != (n, spec.p) {
        return Err(Error::DimensionMismatch(format!(
            "{} init produced {}x{}, expected {n}x{}",
            spec.kind,
            w.nrows(),
            w.ncols(),
            spec.p
        )));
    }
    Ok(InitWeights { w, r, metadata })
}
