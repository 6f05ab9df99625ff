//! Product-of-experts classifier: one RBM per class, squared-projection
//! features and a multinomial logistic-regression head.

mod head;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::baselines::{build_weights, InitKind, InitSpec};
use crate::data_io::{BinaryDataset, ModelArchive, ModelKind};
use crate::error::{Error, Result};
use crate::patterns::{subpattern_clusters, PatternMatrix};
use crate::rbm::{train, EpochReport, GaussBernRbm, TrainConfig};
use crate::scalar::Real;
use crate::seeding;

pub use head::{classify, predict_features, test_error, train_head, HeadConfig, LogRegHead};

/// One expert RBM per class, all with `N` visible and `k` hidden units.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertEnsemble<T: Real> {
    pub experts: Vec<GaussBernRbm<T>>,
    pub init: InitKind,
    pub metadata: BTreeMap<String, String>,
}

impl<T: Real> ExpertEnsemble<T> {
    pub fn new(experts: Vec<GaussBernRbm<T>>, init: InitKind) -> Result<Self> {
        let first = experts.first().ok_or_else(|| Error::InvalidConfig("an ensemble needs experts".into()))?;
        let shape = first.w.shape();
        if experts.iter().any(|e| e.w.shape() != shape) {
            return Err(Error::DimensionMismatch("experts must share N and k".into()));
        }
        Ok(Self { experts, init, metadata: BTreeMap::new() })
    }

    pub fn n_visible(&self) -> usize {
        self.experts[0].n_visible()
    }

    pub fn k(&self) -> usize {
        self.experts[0].n_hidden()
    }

    pub fn n_classes(&self) -> usize {
        self.experts.len()
    }

    /// All expert weights side by side, `N × (classes·k)`.
    fn stacked(&self) -> DMatrix<T> {
        let k = self.k();
        let mut all = DMatrix::zeros(self.n_visible(), k * self.experts.len());
        for (c, e) in self.experts.iter().enumerate() {
            all.columns_mut(c * k, k).copy_from(&e.w);
        }
        all
    }

    /// Archive of kind `poe` holding `W0`, `W1`, ….
    pub fn to_archive(&self) -> ModelArchive {
        let beta = self.experts[0].beta.as_f64();
        let mut a = ModelArchive::new(ModelKind::Poe, self.n_visible(), self.k(), beta).with_meta("init", self.init);
        for (c, e) in self.experts.iter().enumerate() {
            a.insert_matrix(&format!("W{c}"), &e.w);
        }
        for (key, value) in &self.metadata {
            a.metadata.insert(key.clone(), value.clone());
        }
        a
    }

    pub fn from_archive(archive: &ModelArchive) -> Result<Self> {
        if archive.kind != ModelKind::Poe {
            return Err(Error::SchemaMismatch(format!("expected a poe archive, found {:?}", archive.kind)));
        }
        archive.validate()?;
        let init = archive.meta("init").unwrap_or("random").parse()?;
        let mut experts = Vec::new();
        while let Some(entry) = archive.matrices.get(&format!("W{}", experts.len())) {
            experts.push(GaussBernRbm::from_weights(entry.to_matrix(), T::lit(archive.beta))?);
        }
        let mut ens = Self::new(experts, init)?;
        ens.metadata = archive.metadata.clone();
        Ok(ens)
    }
}

/// `f^{(μ)}(s) = ‖sᵀW^{(μ)}‖²` for every expert.
pub fn feature_map<T: Real>(ensemble: &ExpertEnsemble<T>, s: &[i8]) -> DVector<f64> {
    let sv = DVector::from_iterator(s.len(), s.iter().map(|&v| T::from_spin(v)));
    DVector::from_iterator(ensemble.n_classes(), ensemble.experts.iter().map(|e| e.w.tr_mul(&sv).norm_squared().as_f64()))
}

/// Feature matrix (`samples × classes`) computed in blocks of samples.
pub fn features<T: Real>(ensemble: &ExpertEnsemble<T>, data: &BinaryDataset) -> DMatrix<f64> {
    const CHUNK: usize = 1000;
    let k = ensemble.k();
    let all = ensemble.stacked();
    let mut out = DMatrix::zeros(data.len(), ensemble.n_classes());
    let mut start = 0;
    while start < data.len() {
        let end = (start + CHUNK).min(data.len());
        let proj = data.to_matrix::<T>(start..end) * &all;
        for a in 0..end - start {
            for c in 0..ensemble.n_classes() {
                out[(start + a, c)] = proj.view((a, c * k), (1, k)).norm_squared().as_f64();
            }
        }
        start = end;
    }
    out
}

/// Patterns for `k` sub-patterns per class (class means when `k = 1`).
pub fn class_patterns(data: &BinaryDataset, k: usize) -> Result<PatternMatrix> {
    subpattern_clusters(data, k)
}

/// Builds and trains one expert per class on that class's samples only.
///
/// Class `c` trains with seed `derive_seed(cfg.seed, [c])`; with `cfg.epochs = 0`
/// the experts keep their initial weights. Hopfield and Hebbian inits use
/// `patterns` when given, otherwise Ward sub-patterns of `data`.
pub fn train_experts<T: Real>(
    data: &BinaryDataset,
    init: InitKind,
    k: usize,
    cfg: &TrainConfig,
    patterns: Option<&PatternMatrix>,
) -> Result<ExpertEnsemble<T>> {
    train_experts_with(data, init, k, cfg, patterns, |_, _, _| Ok(()))
}

/// [`train_experts`] with a hook called as `(class, expert, report)` at epoch 0
/// and after every epoch of each expert.
pub fn train_experts_with<T: Real, F>(
    data: &BinaryDataset,
    init: InitKind,
    k: usize,
    cfg: &TrainConfig,
    patterns: Option<&PatternMatrix>,
    mut on_epoch: F,
) -> Result<ExpertEnsemble<T>>
where
    F: FnMut(usize, &GaussBernRbm<T>, &EpochReport) -> Result<()>,
{
    let n = data.n_visible();
    let owned;
    let patterns = match (init.uses_patterns(), patterns) {
        (true, Some(p)) => Some(p),
        (true, None) => {
            owned = class_patterns(data, k)?;
            Some(&owned)
        }
        (false, _) => None,
    };
    let mut experts = Vec::with_capacity(data.n_classes());
    for class in 0..data.n_classes() {
        let class_data = data.class_subset(class);
        if class_data.is_empty() {
            return Err(Error::EmptyClass(class));
        }
        let class_seed = seeding::derive_seed(cfg.seed, &[class as u64]);
        let spec = InitSpec { kind: init, p: k, seed: class_seed };
        let class_patterns = patterns.map(|p| p.select(&p.columns_of_class(class as u8)));
        let w = build_weights::<T>(&spec, n, Some(&class_data), class_patterns.as_ref())?.w;
        let rbm = GaussBernRbm::from_weights(w, T::lit(cfg.beta))?;
        let class_cfg = TrainConfig { seed: class_seed, ..cfg.clone() };
        let (rbm, _) = train(rbm, &class_data, &class_cfg, |m, r| on_epoch(class, m, r))?;
        experts.push(rbm);
    }
    let mut ens = ExpertEnsemble::new(experts, init)?;
    ens.metadata.insert("k".into(), k.to_string());
    ens.metadata.insert("epochs".into(), cfg.epochs.to_string());
    ens.metadata.insert("seed".into(), cfg.seed.to_string());
    Ok(ens)
}
