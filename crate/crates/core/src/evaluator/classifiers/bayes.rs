//! Gaussian and multinomial naive Bayes.

use serde::{Deserialize, Serialize};

use crate::evaluator::codec;
use crate::evaluator::matrix::FeatureMatrix;
use crate::evaluator::EvalError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianNb {
    #[serde(with = "codec::f64s")]
    pub log_prior: Vec<f64>,
    /// classes × features, row-major
    #[serde(with = "codec::f64s")]
    pub mean: Vec<f64>,
    #[serde(with = "codec::f64s")]
    pub var: Vec<f64>,
}

impl GaussianNb {
    pub fn fit(x: &FeatureMatrix, y: &[usize], k: usize, var_smoothing: f64) -> GaussianNb {
        let (n, d) = (x.rows(), x.cols());
        let mut count = vec![0.0f64; k];
        let mut sum = vec![0.0; k * d];
        let mut sq = vec![0.0; k * d];
        let mut all_sum = vec![0.0; d];
        let mut all_sq = vec![0.0; d];
        for (i, &c) in y.iter().enumerate() {
            count[c] += 1.0;
            x.for_each_in_row(i, |j, v| {
                sum[c * d + j] += v;
                sq[c * d + j] += v * v;
                all_sum[j] += v;
                all_sq[j] += v * v;
            });
        }
        let max_var = (0..d)
            .map(|j| {
                let m = all_sum[j] / n as f64;
                (all_sq[j] / n as f64 - m * m).max(0.0)
            })
            .fold(0.0, f64::max);
        let eps = var_smoothing * max_var.max(f64::MIN_POSITIVE);
        let mut mean = vec![0.0; k * d];
        let mut var = vec![0.0; k * d];
        for c in 0..k {
            let nc = count[c].max(1.0);
            for j in 0..d {
                let m = sum[c * d + j] / nc;
                mean[c * d + j] = m;
                var[c * d + j] = (sq[c * d + j] / nc - m * m).max(0.0) + eps;
            }
        }
        let log_prior = count.iter().map(|c| (c / n as f64).ln()).collect();
        GaussianNb { log_prior, mean, var }
    }

    pub fn joint_log_likelihood(&self, x: &FeatureMatrix, i: usize) -> Vec<f64> {
        let k = self.log_prior.len();
        let d = self.mean.len() / k.max(1);
        let mut row = vec![0.0; d];
        x.for_each_in_row(i, |j, v| row[j] = v);
        (0..k)
            .map(|c| {
                let mut ll = self.log_prior[c];
                for (j, xv) in row.iter().enumerate() {
                    let v = self.var[c * d + j];
                    let diff = xv - self.mean[c * d + j];
                    ll -= 0.5 * ((2.0 * std::f64::consts::PI * v).ln() + diff * diff / v);
                }
                ll
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultinomialNb {
    #[serde(with = "codec::f64s")]
    pub log_prior: Vec<f64>,
    /// classes × features, row-major
    #[serde(with = "codec::f64s")]
    pub log_prob: Vec<f64>,
}

impl MultinomialNb {
    pub fn fit(x: &FeatureMatrix, y: &[usize], k: usize, alpha: f64) -> Result<MultinomialNb, EvalError> {
        let (n, d) = (x.rows(), x.cols());
        let mut count = vec![0.0; k];
        let mut feat = vec![0.0; k * d];
        let mut negative = false;
        for (i, &c) in y.iter().enumerate() {
            count[c] += 1.0;
            x.for_each_in_row(i, |j, v| {
                negative |= v < 0.0;
                feat[c * d + j] += v;
            });
        }
        if negative {
            return Err(EvalError::Incompatible(
                "multinomial_nb_classifier requires non-negative features".into(),
            ));
        }
        let mut log_prob = vec![0.0; k * d];
        for c in 0..k {
            let total: f64 = feat[c * d..(c + 1) * d].iter().sum::<f64>() + alpha * d as f64;
            for j in 0..d {
                log_prob[c * d + j] = ((feat[c * d + j] + alpha) / total).ln();
            }
        }
        let log_prior = count.iter().map(|c| (c / n as f64).ln()).collect();
        Ok(MultinomialNb { log_prior, log_prob })
    }

    pub fn joint_log_likelihood(&self, x: &FeatureMatrix, i: usize) -> Vec<f64> {
        let k = self.log_prior.len();
        let d = self.log_prob.len() / k.max(1);
        let mut out = self.log_prior.clone();
        x.for_each_in_row(i, |j, v| {
            if v != 0.0 {
                for (c, o) in out.iter_mut().enumerate() {
                    *o += v * self.log_prob[c * d + j];
                }
            }
        });
        out
    }
}

/// Normalized probabilities from log-likelihoods.
pub fn softmax(mut ll: Vec<f64>) -> Vec<f64> {
    let m = ll.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in ll.iter_mut() {
        *v = (*v - m).exp();
        total += *v;
    }
    ll.iter_mut().for_each(|v| *v /= total);
    ll
}
