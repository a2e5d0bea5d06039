//! Classifier fitting and prediction over feature matrices.

pub mod bayes;
pub mod linear;
pub mod sgd;
pub mod tree;

use serde::{Deserialize, Serialize};

use self::bayes::{softmax, GaussianNb, MultinomialNb};
use self::linear::{sigmoid, LinearModel, LinearProblem, Loss, Penalty};
use self::sgd::SgdLoss;
use self::tree::{BoostingParams, ForestParams, GradientBoosting, RandomForest};
use super::matrix::FeatureMatrix;
use super::params::{ParamSet, UNLIMITED};
use super::EvalError;
use crate::seed;
use crate::types::ClassifierAlgorithm;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedClassifier {
    /// One model for two classes, one per class (one-vs-rest) otherwise.
    Logistic { models: Vec<LinearModel> },
    LinearSvc { models: Vec<LinearModel> },
    Sgd { loss: SgdLoss, models: Vec<LinearModel> },
    GaussianNb(GaussianNb),
    MultinomialNb(MultinomialNb),
    RandomForest(RandomForest),
    GradientBoosting(GradientBoosting),
}

/// Predicted class index and, for probabilistic models, its probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub confidence: Option<f64>,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// ±1 targets for each one-vs-rest subproblem (a single one for two classes).
fn ovr_targets(y: &[usize], k: usize) -> Vec<Vec<f64>> {
    let positives: Vec<usize> = if k == 2 { vec![1] } else { (0..k).collect() };
    positives
        .into_iter()
        .map(|c| y.iter().map(|&v| if v == c { 1.0 } else { -1.0 }).collect())
        .collect()
}

fn balanced_weights(y: &[usize], k: usize) -> Vec<f64> {
    let mut count = vec![0.0; k];
    y.iter().for_each(|&c| count[c] += 1.0);
    let n = y.len() as f64;
    y.iter().map(|&c| n / (k as f64 * count[c])).collect()
}

fn positive_int(params: &ParamSet, name: &str, default: i64) -> Result<usize, EvalError> {
    let v = params.int(name, default);
    if v < 1 {
        return Err(EvalError::InvalidParams(format!("{name} must be ≥ 1, got {v}")));
    }
    Ok(v as usize)
}

fn positive_real(params: &ParamSet, name: &str, default: f64) -> Result<f64, EvalError> {
    let v = params.real(name, default);
    if !(v > 0.0 && v.is_finite()) {
        return Err(EvalError::InvalidParams(format!("{name} must be > 0, got {v}")));
    }
    Ok(v)
}

pub fn fit_classifier(
    algorithm: ClassifierAlgorithm,
    x: &FeatureMatrix,
    y: &[usize],
    n_classes: usize,
    params: &ParamSet,
    seed: u64,
) -> Result<FittedClassifier, EvalError> {
    use ClassifierAlgorithm as C;
    Ok(match algorithm {
        C::Logistic | C::LinearSvc => {
            let logistic = algorithm == C::Logistic;
            let penalty = match params.token("norm").unwrap_or("l2") {
                "l2" => Penalty::L2,
                "l1" if logistic => Penalty::L1,
                other => return Err(EvalError::InvalidParams(format!("norm {other}"))),
            };
            let problem = LinearProblem {
                loss: if logistic { Loss::Logistic } else { Loss::SquaredHinge },
                penalty,
                c: positive_real(params, "C", 1.0)?,
                tolerance: positive_real(params, "tolerance", 1e-4)?,
                max_iterations: positive_int(params, "maxIterations", 1000)?,
            };
            let weights = if params.boolean("balance", false) {
                balanced_weights(y, n_classes)
            } else {
                vec![1.0; y.len()]
            };
            let lip = x.spectral_norm_sq(30);
            let models = ovr_targets(y, n_classes)
                .iter()
                .map(|t| linear::fit_binary(x, t, &weights, &problem, lip))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| EvalError::Diverged(algorithm.to_string()))?;
            if logistic {
                FittedClassifier::Logistic { models }
            } else {
                FittedClassifier::LinearSvc { models }
            }
        }
        C::Sgd => {
            let loss = match params.token("loss").unwrap_or("hinge") {
                "hinge" => SgdLoss::Hinge,
                "logistic" => SgdLoss::Logistic,
                other => return Err(EvalError::InvalidParams(format!("loss {other}"))),
            };
            let alpha = positive_real(params, "alpha", 1e-4)?;
            let epochs = positive_int(params, "epochs", 5)?;
            let models = ovr_targets(y, n_classes)
                .iter()
                .enumerate()
                .map(|(c, t)| sgd::fit_binary(x, t, loss, alpha, epochs, seed::derive(seed, &format!("ovr-{c}"))))
                .collect::<Result<Vec<_>, _>>()?;
            FittedClassifier::Sgd { loss, models }
        }
        C::GaussianNb => {
            let smoothing = positive_real(params, "varSmoothing", 1e-9)?;
            FittedClassifier::GaussianNb(GaussianNb::fit(x, y, n_classes, smoothing))
        }
        C::MultinomialNb => {
            let alpha = positive_real(params, "alpha", 1.0)?;
            FittedClassifier::MultinomialNb(MultinomialNb::fit(x, y, n_classes, alpha)?)
        }
        C::RandomForest => {
            let max_depth = match params.token("maxDepth") {
                Some(UNLIMITED) => None,
                Some(other) => return Err(EvalError::InvalidParams(format!("maxDepth {other}"))),
                None => params.get("maxDepth").map(|_| positive_int(params, "maxDepth", 1)).transpose()?,
            };
            let p = ForestParams {
                trees: positive_int(params, "trees", 100)?,
                max_depth,
                min_samples_split: positive_int(params, "minSamplesSplit", 2)?.max(2),
            };
            FittedClassifier::RandomForest(RandomForest::fit(x, y, n_classes, &p, seed))
        }
        C::GradientBoosting => {
            let p = BoostingParams {
                learning_rate: positive_real(params, "learningRate", 0.1)?,
                stages: positive_int(params, "stages", 100)?,
                max_depth: positive_int(params, "maxDepth", 3)?,
            };
            FittedClassifier::GradientBoosting(GradientBoosting::fit(x, y, n_classes, &p, seed))
        }
    })
}

fn linear_scores(models: &[LinearModel], x: &FeatureMatrix, i: usize) -> Vec<f64> {
    models.iter().map(|m| m.decision(x, i)).collect()
}

/// Class probabilities from one-vs-rest sigmoid outputs.
fn ovr_proba(scores: &[f64]) -> Vec<f64> {
    if scores.len() == 1 {
        let p = sigmoid(scores[0]);
        return vec![1.0 - p, p];
    }
    let p: Vec<f64> = scores.iter().map(|&s| sigmoid(s)).collect();
    let total: f64 = p.iter().sum();
    p.iter().map(|v| v / total).collect()
}

fn from_proba(p: Vec<f64>) -> Prediction {
    let class = argmax(&p);
    Prediction { class, confidence: Some(p[class].clamp(0.0, 1.0)) }
}

fn from_decision(scores: &[f64]) -> Prediction {
    let class = if scores.len() == 1 { usize::from(scores[0] > 0.0) } else { argmax(scores) };
    Prediction { class, confidence: None }
}

impl FittedClassifier {
    pub fn algorithm(&self) -> ClassifierAlgorithm {
        match self {
            FittedClassifier::Logistic { .. } => ClassifierAlgorithm::Logistic,
            FittedClassifier::LinearSvc { .. } => ClassifierAlgorithm::LinearSvc,
            FittedClassifier::Sgd { .. } => ClassifierAlgorithm::Sgd,
            FittedClassifier::GaussianNb(_) => ClassifierAlgorithm::GaussianNb,
            FittedClassifier::MultinomialNb(_) => ClassifierAlgorithm::MultinomialNb,
            FittedClassifier::RandomForest(_) => ClassifierAlgorithm::RandomForest,
            FittedClassifier::GradientBoosting(_) => ClassifierAlgorithm::GradientBoosting,
        }
    }

    pub fn predict(&self, x: &FeatureMatrix, i: usize) -> Prediction {
        match self {
            FittedClassifier::Logistic { models } => from_proba(ovr_proba(&linear_scores(models, x, i))),
            FittedClassifier::LinearSvc { models } => from_decision(&linear_scores(models, x, i)),
            FittedClassifier::Sgd { loss: SgdLoss::Logistic, models } => {
                from_proba(ovr_proba(&linear_scores(models, x, i)))
            }
            FittedClassifier::Sgd { loss: SgdLoss::Hinge, models } => from_decision(&linear_scores(models, x, i)),
            FittedClassifier::GaussianNb(m) => from_proba(softmax(m.joint_log_likelihood(x, i))),
            FittedClassifier::MultinomialNb(m) => from_proba(softmax(m.joint_log_likelihood(x, i))),
            FittedClassifier::RandomForest(m) => from_proba(m.proba(x, i)),
            FittedClassifier::GradientBoosting(m) => from_proba(m.proba(x, i)),
        }
    }

    pub fn predict_all(&self, x: &FeatureMatrix) -> Vec<Prediction> {
        (0..x.rows()).map(|i| self.predict(x, i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::matrix::DenseMatrix;
    use crate::evaluator::params::{sample_params, ParamValue};
    use crate::types::Component;

    /// Three well-separated Gaussian-ish clusters built from a fixed lattice.
    fn blobs() -> (FeatureMatrix, Vec<usize>) {
        let centers = [(-6.0, 0.0), (6.0, 0.0), (0.0, 8.0)];
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for (c, (cx, cy)) in centers.iter().enumerate() {
            for k in 0..30 {
                let dx = ((k * 7) % 11) as f64 / 11.0 - 0.5;
                let dy = ((k * 5) % 13) as f64 / 13.0 - 0.5;
                rows.push(vec![cx + dx, cy + dy]);
                y.push(c);
            }
        }
        (FeatureMatrix::Dense(DenseMatrix::from_rows(&rows)), y)
    }

    #[test]
    fn every_classifier_separates_shifted_blobs() {
        let (x, y) = blobs();
        // multinomial NB needs non-negative counts
        let shifted = {
            let d = x.try_to_dense().unwrap();
            let rows: Vec<Vec<f64>> = (0..d.rows).map(|i| d.row(i).iter().map(|v| v + 10.0).collect()).collect();
            FeatureMatrix::Dense(DenseMatrix::from_rows(&rows))
        };
        for &alg in ClassifierAlgorithm::ALL {
            let params = match alg {
                ClassifierAlgorithm::Logistic => ParamSet::new().with("C", ParamValue::Real(10.0)),
                _ => ParamSet::new(),
            };
            let data = if alg == ClassifierAlgorithm::MultinomialNb { &shifted } else { &x };
            let m = fit_classifier(alg, data, &y, 3, &params, 5).unwrap();
            let correct = m.predict_all(data).iter().zip(&y).filter(|(p, t)| p.class == **t).count();
            let floor = if alg == ClassifierAlgorithm::MultinomialNb { 60 } else { 90 };
            assert!(correct >= floor, "{alg}: {correct}/90");
        }
    }

    #[test]
    fn sampled_params_always_fit() {
        let (x, y) = blobs();
        for &alg in ClassifierAlgorithm::ALL {
            if alg == ClassifierAlgorithm::MultinomialNb {
                continue;
            }
            for s in 0..3 {
                let p = sample_params(Component::Classifier(alg), s);
                let m = fit_classifier(alg, &x, &y, 3, &p, s).unwrap();
                for pred in m.predict_all(&x) {
                    assert!(pred.confidence.is_none_or(|c| (0.0..=1.0).contains(&c)));
                }
            }
        }
    }

    #[test]
    fn rejects_out_of_space_tokens() {
        let (x, y) = blobs();
        let p = ParamSet::new().with("norm", ParamValue::tok("l3"));
        assert!(matches!(
            fit_classifier(ClassifierAlgorithm::Logistic, &x, &y, 3, &p, 0),
            Err(EvalError::InvalidParams(_))
        ));
    }
}
