//! Stratified v-fold cross-validation.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::Confusion;
use super::pipeline::{encode_labels, FittedPipeline, PipelineInstance};
use super::EvalError;
use crate::ingest::Dataset;
use crate::parallel::WorkerPool;
use crate::types::Metric;

pub const DEFAULT_SHUFFLE_SEED: u64 = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CvResult {
    pub fold_scores: BTreeMap<Metric, Vec<f64>>,
    pub mean: BTreeMap<Metric, f64>,
    pub fit_seconds: f64,
}

impl CvResult {
    pub fn from_folds(fold_scores: BTreeMap<Metric, Vec<f64>>, fit_seconds: f64) -> CvResult {
        let mean = fold_scores
            .iter()
            .map(|(m, v)| (*m, v.iter().sum::<f64>() / v.len().max(1) as f64))
            .collect();
        CvResult { fold_scores, mean, fit_seconds }
    }

    pub fn score(&self, metric: Metric) -> Option<f64> {
        self.mean.get(&metric).copied()
    }

    pub fn folds(&self) -> usize {
        self.fold_scores.values().next().map_or(0, Vec::len)
    }
}

/// Validation row indices of each fold, ascending. Each class is shuffled
/// independently, then the concatenated class lists are dealt round-robin, so
/// fold sizes differ by at most one and every fold mirrors the class mix.
pub fn stratified_folds(y: &[usize], v: usize, seed: u64) -> Result<Vec<Vec<usize>>, EvalError> {
    if v < 2 {
        return Err(EvalError::TooFewFolds(v));
    }
    if v > y.len() {
        return Err(EvalError::TooManyFolds { folds: v, rows: y.len() });
    }
    let k = y.iter().copied().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &c) in y.iter().enumerate() {
        by_class[c].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); v];
    let mut next = 0;
    for members in by_class.iter_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            folds[next % v].push(i);
            next += 1;
        }
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(folds)
}

fn fold_scores(
    instance: &PipelineInstance,
    dataset: &Dataset,
    y: &[usize],
    n_classes: usize,
    validation: &[usize],
    metrics: &[Metric],
) -> Result<Vec<f64>, EvalError> {
    let mut in_validation = vec![false; y.len()];
    validation.iter().for_each(|&i| in_validation[i] = true);
    let train: Vec<usize> = (0..y.len()).filter(|&i| !in_validation[i]).collect();
    let y_train: Vec<usize> = train.iter().map(|&i| y[i]).collect();
    let fitted = FittedPipeline::fit(instance, dataset, &train, &y_train, n_classes)?;
    let predicted: Vec<usize> = fitted.predict(dataset, validation)?.iter().map(|p| p.class).collect();
    let truth: Vec<usize> = validation.iter().map(|&i| y[i]).collect();
    let confusion = Confusion::from_pairs(n_classes, &truth, &predicted);
    Ok(metrics.iter().map(|m| confusion.score(*m)).collect())
}

/// Cross-validates `instance` on `dataset` with `v` stratified folds
/// (shuffle seed [`DEFAULT_SHUFFLE_SEED`]). Every fitted statistic comes from
/// the fold's training split only.
pub fn cross_validate(
    instance: &PipelineInstance,
    dataset: &Dataset,
    v: usize,
    metrics: &[Metric],
    pool: &WorkerPool,
) -> Result<CvResult, EvalError> {
    let start = Instant::now();
    let (classes, y) = encode_labels(dataset)?;
    if classes.len() < 2 {
        return Err(EvalError::SingleClass);
    }
    let folds = stratified_folds(&y, v, DEFAULT_SHUFFLE_SEED)?;
    for (f, validation) in folds.iter().enumerate() {
        let mut present = vec![false; classes.len()];
        let mut in_validation = vec![false; y.len()];
        validation.iter().for_each(|&i| in_validation[i] = true);
        (0..y.len()).filter(|&i| !in_validation[i]).for_each(|i| present[y[i]] = true);
        if present.iter().filter(|&&p| p).count() < 2 {
            return Err(EvalError::SingleClassFold(f));
        }
    }
    let results = pool.map(folds, |validation| fold_scores(instance, dataset, &y, classes.len(), &validation, metrics));
    let mut scores: BTreeMap<Metric, Vec<f64>> = metrics.iter().map(|m| (*m, Vec::with_capacity(v))).collect();
    for fold in results {
        for (m, s) in metrics.iter().zip(fold?) {
            scores.get_mut(m).expect("metric").push(s);
        }
    }
    Ok(CvResult::from_folds(scores, start.elapsed().as_secs_f64()))
}
