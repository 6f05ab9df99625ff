use std::ops::AddAssign;

use nalgebra::{DMatrix, DVector};

use super::{features, ExpertEnsemble};
use crate::data_io::BinaryDataset;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct HeadConfig {
    /// L2 penalty on the weights (intercepts are not penalized).
    pub l2: f64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self { l2: 1e-4, tol: 1e-8, max_iters: 200 }
    }
}

/// Multinomial logistic regression on standardized features.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRegHead {
    /// `classes × features`.
    pub weights: DMatrix<f64>,
    pub intercepts: DVector<f64>,
    pub feature_mean: DVector<f64>,
    pub feature_scale: DVector<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
}

impl LogRegHead {
    pub fn n_classes(&self) -> usize {
        self.weights.nrows()
    }

    fn standardize(&self, f: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = f.clone();
        for (j, mut col) in z.column_iter_mut().enumerate() {
            col.apply(|v| *v = (*v - self.feature_mean[j]) / self.feature_scale[j]);
        }
        z
    }

    /// Class scores `samples × classes`.
    pub fn scores(&self, f: &DMatrix<f64>) -> DMatrix<f64> {
        let mut s = self.standardize(f) * self.weights.transpose();
        for mut row in s.row_iter_mut() {
            row += self.intercepts.transpose();
        }
        s
    }

    /// Argmax class of every feature row (lowest index on ties).
    pub fn predict(&self, f: &DMatrix<f64>) -> Vec<u8> {
        self.scores(f)
            .row_iter()
            .map(|r| r.iter().enumerate().fold(0, |best, (c, &v)| if v > r[best] { c } else { best }) as u8)
            .collect()
    }
}

/// Row-wise softmax in place.
fn softmax_rows(s: &mut DMatrix<f64>) {
    for mut row in s.row_iter_mut() {
        let max = row.max();
        row.apply(|v| *v = (*v - max).exp());
        let total = row.sum();
        row /= total;
    }
}

/// Mean negative log-likelihood plus `½ l2 ‖W‖²`; `theta` is `classes × (features + 1)` with the intercept last.
fn objective(x: &DMatrix<f64>, y: &[u8], theta: &DMatrix<f64>, l2: f64) -> f64 {
    let m = x.nrows() as f64;
    let f = x.ncols() - 1;
    let s = x * theta.transpose();
    let mut nll = 0.0;
    for (a, row) in s.row_iter().enumerate() {
        let max = row.max();
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        nll += lse - row[y[a] as usize];
    }
    nll / m + 0.5 * l2 * theta.columns(0, f).norm_squared()
}

/// Fits the head by damped Newton iterations (backtracking line search) until
/// the gradient norm drops below `tol`.
pub fn train_head(feats: &DMatrix<f64>, labels: &[u8], n_classes: usize, cfg: &HeadConfig) -> Result<LogRegHead> {
    let (m, f) = feats.shape();
    if m == 0 || m != labels.len() {
        return Err(Error::InvalidDataset(format!("{m} feature rows for {} labels", labels.len())));
    }
    if feats.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidDataset("features must be finite".into()));
    }
    if labels.iter().any(|&l| l as usize >= n_classes) {
        return Err(Error::InvalidDataset("label out of range".into()));
    }
    let mean = DVector::from_fn(f, |j, _| feats.column(j).mean());
    let scale = DVector::from_fn(f, |j, _| {
        let sd = feats.column(j).variance().sqrt();
        if sd > 0.0 { sd } else { 1.0 }
    });
    // design matrix with a trailing column of ones
    let x = DMatrix::from_fn(m, f + 1, |a, j| if j < f { (feats[(a, j)] - mean[j]) / scale[j] } else { 1.0 });
    let d = f + 1;
    let n_params = n_classes * d;
    let mut theta = DMatrix::<f64>::zeros(n_classes, d);
    let mut value = objective(&x, labels, &theta, cfg.l2);
    let mut grad_norm = f64::INFINITY;
    for iter in 0..=cfg.max_iters {
        let mut p = &x * theta.transpose();
        softmax_rows(&mut p);
        let mut resid = p.clone();
        for (a, &l) in labels.iter().enumerate() {
            resid[(a, l as usize)] -= 1.0;
        }
        let mut grad = resid.transpose() * &x / m as f64;
        let penalty = theta.columns(0, f) * cfg.l2;
        grad.columns_mut(0, f).add_assign(&penalty);
        grad_norm = grad.norm();
        if grad_norm < cfg.tol {
            return Ok(LogRegHead {
                weights: theta.columns(0, f).into_owned(),
                intercepts: theta.column(f).into_owned(),
                feature_mean: mean,
                feature_scale: scale,
                iterations: iter,
                grad_norm,
            });
        }
        if iter == cfg.max_iters {
            break;
        }
        // Hessian over (class, feature) pairs, parameter index c·d + j
        let mut h = DMatrix::<f64>::zeros(n_params, n_params);
        for c in 0..n_classes {
            for e in c..n_classes {
                let wts = DVector::from_fn(m, |a, _| {
                    let delta = if c == e { p[(a, c)] } else { 0.0 };
                    (delta - p[(a, c)] * p[(a, e)]) / m as f64
                });
                let mut xw = x.clone();
                for (a, mut row) in xw.row_iter_mut().enumerate() {
                    row *= wts[a];
                }
                let block = x.tr_mul(&xw);
                h.view_mut((c * d, e * d), (d, d)).copy_from(&block);
                if e != c {
                    h.view_mut((e * d, c * d), (d, d)).copy_from(&block.transpose());
                }
            }
        }
        for c in 0..n_classes {
            for j in 0..d {
                // ridge on weights; a tiny one on intercepts fixes the softmax gauge
                h[(c * d + j, c * d + j)] += if j < f { cfg.l2 } else { 1e-10 };
            }
        }
        let g = DVector::from_iterator(n_params, (0..n_classes).flat_map(|c| (0..d).map(move |j| (c, j))).map(|(c, j)| grad[(c, j)]));
        let step = match h.clone().cholesky() {
            Some(ch) => ch.solve(&g),
            None => g.clone(),
        };
        let step = DMatrix::from_fn(n_classes, d, |c, j| step[c * d + j]);
        let mut t = 1.0;
        loop {
            let trial = &theta - &step * t;
            let v = objective(&x, labels, &trial, cfg.l2);
            if v <= value - 1e-4 * t * g.dot(&DVector::from_iterator(n_params, step.transpose().iter().copied())) || t < 1e-10 {
                theta = trial;
                value = v;
                break;
            }
            t *= 0.5;
        }
    }
    Err(Error::NonConvergence { iterations: cfg.max_iters, grad_norm })
}

/// Argmax-probability class of one sample.
pub fn classify<T: Real>(ensemble: &ExpertEnsemble<T>, head: &LogRegHead, s: &[i8]) -> u8 {
    let f = super::feature_map(ensemble, s);
    head.predict(&DMatrix::from_row_slice(1, f.len(), f.as_slice()))[0]
}

pub fn predict_features<T: Real>(ensemble: &ExpertEnsemble<T>, head: &LogRegHead, data: &BinaryDataset) -> Vec<u8> {
    head.predict(&features(ensemble, data))
}

/// Fraction of misclassified samples.
pub fn test_error<T: Real>(ensemble: &ExpertEnsemble<T>, head: &LogRegHead, data: &BinaryDataset) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let predicted = predict_features(ensemble, head, data);
    let wrong = predicted.iter().zip(data.labels()).filter(|(p, l)| p != l).count();
    wrong as f64 / data.len() as f64
}
