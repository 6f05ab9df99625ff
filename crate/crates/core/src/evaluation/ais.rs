use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{ContinuousModel, LnZEstimate, LnZMethod};
use crate::error::{Error, Result};
use crate::scalar::{log_sum_exp, Real};
use crate::seeding;

/// Interpolation exponents `0 = t₀ < t₁ < … < t_K = 1` of the path `q^{1−t} π^t`.
#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    Linear,
    /// `t_k` geometrically spaced from `start` to 1 after `t₀ = 0`.
    Geometric { start: f64 },
    Custom(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AisConfig {
    pub chains: usize,
    /// Number of intermediate distributions `K`.
    pub levels: usize,
    pub schedule: Schedule,
    /// Metropolis–Hastings steps per level.
    pub mh_steps: usize,
    pub seed: u64,
    /// Chains in the step-size pilot run.
    pub pilot_chains: usize,
    pub target_acceptance: f64,
}

impl Default for AisConfig {
    fn default() -> Self {
        Self {
            chains: 500,
            levels: 1000,
            schedule: Schedule::Geometric { start: 1e-3 },
            mh_steps: 5,
            seed: 0,
            pilot_chains: 8,
            target_acceptance: 0.5,
        }
    }
}

impl AisConfig {
    /// 500 chains × 1000 levels.
    pub fn fig2() -> Self {
        Self::default()
    }

    /// 100 chains × 1000 levels.
    pub fn desk() -> Self {
        Self { chains: 100, ..Self::default() }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    /// The validated exponent sequence.
    pub fn temperatures(&self) -> Result<Vec<f64>> {
        let k = self.levels;
        let t = match &self.schedule {
            Schedule::Linear => (0..=k).map(|i| i as f64 / k.max(1) as f64).collect(),
            Schedule::Geometric { start } => {
                if !(*start > 0.0 && *start < 1.0) || k < 2 {
                    return Err(Error::DegenerateSchedule(format!(
                        "geometric schedule needs 0 < start < 1 and at least 2 levels (start {start}, levels {k})"
                    )));
                }
                let mut t = vec![0.0];
                t.extend((0..k).map(|i| start.powf((k - 1 - i) as f64 / (k - 1) as f64)));
                *t.last_mut().expect("non-empty") = 1.0;
                t
            }
            Schedule::Custom(t) => t.clone(),
        };
        if t.len() < 2 || t[0] != 0.0 || *t.last().expect("non-empty") != 1.0 || t.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::DegenerateSchedule(
                "schedule must start at 0, end at 1 and increase strictly".into(),
            ));
        }
        if self.chains == 0 || self.mh_steps == 0 {
            return Err(Error::InvalidConfig("AIS needs at least one chain and one MH step per level".into()));
        }
        Ok(t)
    }
}

/// AIS estimate with the per-chain log importance weights and the per-level step sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct AisRun {
    pub estimate: LnZEstimate,
    pub log_weights: Vec<f64>,
    pub step_sizes: Vec<f64>,
}

struct Path<'a, T: Real, M: ContinuousModel<T> + ?Sized> {
    model: &'a M,
    mean: DVector<T>,
    chol: nalgebra::DMatrix<T>,
    /// `log_norm − ln q_norm`, added once so the per-point part can cancel exactly.
    offset: f64,
}

/// Current point with `ln q(λ)` (up to its constant) and `ln π(λ) − ln q(λ)`.
#[derive(Clone)]
struct State<T: Real> {
    lambda: DVector<T>,
    log_q: f64,
    ratio: f64,
}

impl<'a, T: Real, M: ContinuousModel<T> + ?Sized> Path<'a, T, M> {
    fn new(model: &'a M) -> Self {
        let (mean, chol) = model.proposal();
        let p = mean.len() as f64;
        let ln_det: f64 = chol.diagonal().iter().map(|d| d.as_f64().ln()).sum();
        let log_q_norm = -0.5 * p * (2.0 * std::f64::consts::PI).ln() - ln_det;
        Self { model, mean, chol, offset: model.log_norm().as_f64() - log_q_norm }
    }

    fn state(&self, lambda: DVector<T>) -> State<T> {
        let z = self
            .chol
            .solve_lower_triangular(&(&lambda - &self.mean))
            .expect("proposal covariance factor is non-singular");
        let half_sq = (z.norm_squared() * T::lit(0.5)).as_f64();
        let kernel = self.model.log_kernel(&lambda).as_f64();
        State { lambda, log_q: -half_sq, ratio: self.offset + (kernel + half_sq) }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> State<T> {
        let z = DVector::from_fn(self.mean.len(), |_, _| {
            let v: f64 = StandardNormal.sample(rng);
            T::lit(v)
        });
        self.state(&self.mean + &self.chol * z)
    }

    /// `mh_steps` random-walk MH moves targeting `q^{1−t} π^t`; returns accepted count.
    fn mh<R: Rng + ?Sized>(&self, st: &mut State<T>, t: f64, step: f64, n: usize, rng: &mut R) -> usize {
        let mut accepted = 0;
        for _ in 0..n {
            let prop = DVector::from_fn(st.lambda.len(), |mu, _| {
                let z: f64 = StandardNormal.sample(rng);
                st.lambda[mu] + T::lit(step * z)
            });
            let cand = self.state(prop);
            let log_a = (cand.log_q + t * cand.ratio) - (st.log_q + t * st.ratio);
            if log_a >= 0.0 || rng.random::<f64>().ln() < log_a {
                *st = cand;
                accepted += 1;
            }
        }
        accepted
    }
}

/// Pilot run that tunes one step size per level toward the target acceptance rate.
fn pilot_step_sizes<T: Real, M: ContinuousModel<T> + ?Sized, R: Rng + ?Sized>(
    path: &Path<'_, T, M>,
    temps: &[f64],
    cfg: &AisConfig,
    rng: &mut R,
) -> Vec<f64> {
    let mut states: Vec<State<T>> = (0..cfg.pilot_chains.max(1)).map(|_| path.draw(rng)).collect();
    let scale = path.chol.diagonal().iter().map(|d| d.as_f64()).fold(0.0, f64::max);
    let mut step = scale;
    let mut steps = Vec::with_capacity(temps.len());
    for &t in &temps[1..] {
        // a few rounds of multiplicative adaptation at this level
        for _ in 0..3 {
            let mut acc = 0;
            for st in states.iter_mut() {
                acc += path.mh(st, t, step, cfg.mh_steps, rng);
            }
            let rate = acc as f64 / (states.len() * cfg.mh_steps) as f64;
            step = (step * (2.0 * (rate - cfg.target_acceptance)).exp()).clamp(1e-6 * scale, 1e3 * scale);
        }
        steps.push(step);
    }
    steps
}

/// Annealed importance sampling on the continuous `λ` representation.
///
/// Chain `j` uses the stream `derive_seed(seed, [1, j])`; the pilot uses `[0]`.
pub fn ln_z_ais<T: Real, M: ContinuousModel<T> + ?Sized>(model: &M, cfg: &AisConfig) -> Result<AisRun> {
    let temps = cfg.temperatures()?;
    let path = Path::new(model);
    let step_sizes = pilot_step_sizes(&path, &temps, cfg, &mut seeding::stream(cfg.seed, &[0]));

    let log_weights: Vec<f64> = (0..cfg.chains)
        .into_par_iter()
        .map(|j| {
            let mut rng = seeding::stream(cfg.seed, &[1, j as u64]);
            let mut st = path.draw(&mut rng);
            let mut log_w = 0.0;
            for (k, w) in temps.windows(2).enumerate() {
                log_w += (w[1] - w[0]) * st.ratio;
                path.mh(&mut st, w[1], step_sizes[k], cfg.mh_steps, &mut rng);
            }
            log_w
        })
        .collect();

    let n = log_weights.len() as f64;
    let value = log_sum_exp(&log_weights) - n.ln();
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = log_weights.iter().map(|&l| (l - max).exp()).collect();
    let mean = scaled.iter().sum::<f64>() / n;
    let stderr = if log_weights.len() > 1 {
        let var = scaled.iter().map(|&w| (w - mean).powi(2)).sum::<f64>() / (n - 1.0);
        var.sqrt() / (n.sqrt() * mean)
    } else {
        0.0
    };
    Ok(AisRun {
        estimate: LnZEstimate { value, method: LnZMethod::Ais, chains: cfg.chains, steps: cfg.levels, stderr },
        log_weights,
        step_sizes,
    })
}
