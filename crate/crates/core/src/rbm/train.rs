use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::GaussBernRbm;
use crate::data_io::BinaryDataset;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::seeding;

/// Variants of the CD estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CdOptions {
    /// Use `E[λ | s^(K)]` instead of a sampled `λ^(K)` in the negative phase.
    pub mean_field_negative: bool,
    /// Persistent chains carried across mini-batches instead of restarting at the data.
    pub persistent: bool,
}

/// Positive-minus-negative statistics of one mini-batch.
#[derive(Debug, Clone)]
pub struct CdStatistics<T: Real> {
    pub dw: DMatrix<T>,
    pub db: DVector<T>,
    pub dc: DVector<T>,
    /// Visible states `s^(K)` at the end of each chain.
    pub final_states: Vec<Vec<i8>>,
}

fn spin_rows<T: Real>(rows: &[&[i8]], n: usize) -> DMatrix<T> {
    DMatrix::from_fn(rows.len(), n, |a, i| T::from_spin(rows[a][i]))
}

/// CD statistics for `batch` with chains started at `starts` (one per batch row).
/// Chain `j` draws from the stream `derive_seed(seed, [j])`.
pub fn cd_gradient_from<T: Real>(
    rbm: &GaussBernRbm<T>,
    batch: &[&[i8]],
    starts: &[&[i8]],
    k: usize,
    opts: CdOptions,
    seed: u64,
) -> CdStatistics<T> {
    assert!(!batch.is_empty(), "CD needs a non-empty batch");
    assert_eq!(batch.len(), starts.len(), "one chain start per batch row");
    let n = rbm.n_visible();
    let inv_b = T::one() / T::count(batch.len());

    let data = spin_rows::<T>(batch, n);
    let mut hidden = &data * &rbm.w;
    for mut row in hidden.row_iter_mut() {
        row += rbm.c.transpose();
    }

    let chains: Vec<(Vec<i8>, DVector<T>)> = starts
        .par_iter()
        .enumerate()
        .map(|(j, start)| {
            let mut rng = seeding::stream(seed, &[j as u64]);
            let mut s = start.to_vec();
            for _ in 0..k {
                let lambda = rbm.sample_hidden(&s, &mut rng);
                s = rbm.sample_visible(&lambda, &mut rng);
            }
            let lambda = if opts.mean_field_negative { rbm.mean_hidden(&s) } else { rbm.sample_hidden(&s, &mut rng) };
            (s, lambda)
        })
        .collect();

    let model_rows: Vec<&[i8]> = chains.iter().map(|(s, _)| s.as_slice()).collect();
    let model = spin_rows::<T>(&model_rows, n);
    let model_hidden = DMatrix::from_fn(chains.len(), rbm.n_hidden(), |a, mu| chains[a].1[mu]);

    let dw = (data.tr_mul(&hidden) - model.tr_mul(&model_hidden)) * inv_b;
    let db = (data.row_sum() - model.row_sum()).transpose() * inv_b;
    let dc = (hidden.row_sum() - model_hidden.row_sum()).transpose() * inv_b;
    CdStatistics { dw, db, dc, final_states: chains.into_iter().map(|(s, _)| s).collect() }
}

/// CD-k weight gradient `⟨s(Wᵀs + c)ᵀ⟩_data − ⟨s^(K) λ^(K)ᵀ⟩` for chains started at the data.
pub fn cd_k_gradient<T: Real, R: Rng + ?Sized>(
    rbm: &GaussBernRbm<T>,
    batch: &[&[i8]],
    k: usize,
    rng: &mut R,
) -> DMatrix<T> {
    cd_gradient_from(rbm, batch, batch, k, CdOptions::default(), rng.random()).dw
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub cd_steps: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta: f64,
    /// Biases are frozen unless set.
    pub train_biases: bool,
    pub cd: CdOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 100,
            cd_steps: 20,
            epochs: 50,
            seed: 0,
            beta: 2.0,
            train_biases: false,
            cd: CdOptions::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate must be non-negative, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.cd_steps == 0 {
            return Err(Error::InvalidConfig("batch size and CD steps must be at least 1".into()));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidConfig(format!("inverse temperature must be positive, got {}", self.beta)));
        }
        Ok(())
    }
}

/// Per-epoch summary handed to the training callback; epoch 0 is the initial model.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub weight_norm: f64,
    /// `‖W − W₀‖_F / ‖W₀‖_F` (absolute change when `W₀ = 0`).
    pub relative_change: f64,
    /// Frobenius norm of the summed updates applied during the epoch.
    pub epoch_step_norm: f64,
}

/// Mini-batch CD-k ascent `W ← W + η ΔW`. The callback sees the model before
/// training (epoch 0) and after every epoch; an error from it aborts training.
pub fn train<T: Real, F>(
    mut rbm: GaussBernRbm<T>,
    data: &BinaryDataset,
    cfg: &TrainConfig,
    mut callback: F,
) -> Result<(GaussBernRbm<T>, Vec<EpochReport>)>
where
    F: FnMut(&GaussBernRbm<T>, &EpochReport) -> Result<()>,
{
    cfg.validate()?;
    if data.n_visible() != rbm.n_visible() {
        return Err(Error::DimensionMismatch(format!(
            "data has {} visible units, model has {}",
            data.n_visible(),
            rbm.n_visible()
        )));
    }
    if data.is_empty() {
        return Err(Error::InvalidDataset("training set is empty".into()));
    }
    rbm.beta = T::lit(cfg.beta);
    let w0 = rbm.w.clone();
    let w0_norm = w0.norm().as_f64();
    let report = |rbm: &GaussBernRbm<T>, epoch: usize, step: f64| {
        let change = (&rbm.w - &w0).norm().as_f64();
        EpochReport {
            epoch,
            weight_norm: rbm.w.norm().as_f64(),
            relative_change: if w0_norm > 0.0 { change / w0_norm } else { change },
            epoch_step_norm: step,
        }
    };

    let mut log = vec![report(&rbm, 0, 0.0)];
    callback(&rbm, &log[0])?;

    let eta = T::lit(cfg.learning_rate);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut persistent: Option<Vec<Vec<i8>>> = None;
    for epoch in 1..=cfg.epochs {
        let mut shuffle_rng = seeding::stream(cfg.seed, &[0, epoch as u64]);
        order.shuffle(&mut shuffle_rng);
        let w_start = rbm.w.clone();
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&[i8]> = chunk.iter().map(|&a| data.sample(a)).collect();
            let seed = seeding::derive_seed(cfg.seed, &[1, epoch as u64, bi as u64]);
            let stats = if cfg.cd.persistent {
                let chains = persistent.get_or_insert_with(|| batch.iter().map(|s| s.to_vec()).collect());
                while chains.len() < batch.len() {
                    chains.push(batch[chains.len()].to_vec());
                }
                let starts: Vec<&[i8]> = chains.iter().take(batch.len()).map(Vec::as_slice).collect();
                let stats = cd_gradient_from(&rbm, &batch, &starts, cfg.cd_steps, cfg.cd, seed);
                for (dst, src) in chains.iter_mut().zip(&stats.final_states) {
                    dst.clone_from(src);
                }
                stats
            } else {
                cd_gradient_from(&rbm, &batch, &batch, cfg.cd_steps, cfg.cd, seed)
            };
            rbm.w += stats.dw * eta;
            if cfg.train_biases {
                rbm.b += stats.db * eta;
                rbm.c += stats.dc * eta;
            }
        }
        let step = (&rbm.w - w_start).norm().as_f64();
        let r = report(&rbm, epoch, step);
        log::debug!("epoch {epoch}: |W| = {:.4}, change {:.4}", r.weight_norm, r.relative_change);
        callback(&rbm, &r)?;
        log.push(r);
    }
    Ok((rbm, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::Split;
    use rand::SeedableRng;

    #[test]
    fn two_by_one_hand_computed_gradient() {
        // β so large that both Gibbs conditionals are deterministic
        let w = DMatrix::from_row_slice(2, 1, &[0.5, -0.25]);
        let rbm = GaussBernRbm::<f64>::new(w, DVector::from_vec(vec![0.0, 1.0]), DVector::zeros(1), 1e12).unwrap();
        let s: &[i8] = &[1, -1];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        // λ⁰ = 0.75, x = (0.375, 0.8125) → s¹ = (1, 1), λ¹ = 0.25
        let g = cd_k_gradient(&rbm, &[s], 1, &mut rng);
        assert!((g[(0, 0)] - 0.5).abs() < 1e-5);
        assert!((g[(1, 0)] + 1.0).abs() < 1e-5);
    }

    #[test]
    fn zero_learning_rate_and_frozen_biases() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let rbm = GaussBernRbm::random(8, 2, 0.1, 2.0, &mut rng).unwrap();
        let rows: Vec<Vec<i8>> =
            (0..30).map(|_| (0..8).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect()).collect();
        let data = BinaryDataset::from_rows(&rows, vec![0; 30], Split::Synthetic).unwrap();
        let cfg = TrainConfig { learning_rate: 0.0, epochs: 3, batch_size: 7, cd_steps: 2, ..Default::default() };
        let (same, log) = train(rbm.clone(), &data, &cfg, |_, _| Ok(())).unwrap();
        assert_eq!(same.w, rbm.w);
        assert_eq!(log.len(), 4);

        let cfg = TrainConfig { learning_rate: 0.05, ..cfg };
        let (moved, _) = train(rbm.clone(), &data, &cfg, |_, _| Ok(())).unwrap();
        assert_ne!(moved.w, rbm.w);
        assert_eq!(moved.b, rbm.b);
        assert_eq!(moved.c, rbm.c);
    }

    #[test]
    fn training_is_reproducible() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let rbm = GaussBernRbm::random(6, 2, 0.1, 1.0, &mut rng).unwrap();
        let rows: Vec<Vec<i8>> =
            (0..20).map(|_| (0..6).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect()).collect();
        let data = BinaryDataset::from_rows(&rows, vec![0; 20], Split::Synthetic).unwrap();
        let cfg = TrainConfig { learning_rate: 0.01, epochs: 2, batch_size: 5, cd_steps: 3, seed: 9, ..Default::default() };
        let a = train(rbm.clone(), &data, &cfg, |_, _| Ok(())).unwrap().0;
        let b = train(rbm, &data, &cfg, |_, _| Ok(())).unwrap().0;
        assert_eq!(a, b);
    }
}
