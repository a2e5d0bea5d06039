//! Plain stochastic gradient descent for L2-regularized linear classifiers,
//! with the "optimal" step schedule ηₜ = 1/(α(t₀+t)).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::linear::{sigmoid, LinearModel};
use crate::evaluator::matrix::FeatureMatrix;
use crate::evaluator::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SgdLoss {
    Hinge,
    Logistic,
}

impl SgdLoss {
    /// d loss / d decision for target t ∈ {−1, +1}.
    fn dloss(self, p: f64, t: f64) -> f64 {
        let z = p * t;
        match self {
            SgdLoss::Hinge => {
                if z <= 1.0 {
                    -t
                } else {
                    0.0
                }
            }
            SgdLoss::Logistic => -t * sigmoid(-z),
        }
    }
}

pub fn fit_binary(
    x: &FeatureMatrix,
    t: &[f64],
    loss: SgdLoss,
    alpha: f64,
    epochs: usize,
    seed: u64,
) -> Result<LinearModel, EvalError> {
    let d = x.cols();
    let typw = (1.0 / alpha.sqrt()).sqrt();
    let eta0 = typw / loss.dloss(-typw, 1.0).abs().max(1.0);
    let t0 = 1.0 / (alpha * eta0);
    let intercept_decay = if matches!(x, FeatureMatrix::Sparse(_)) { 0.01 } else { 1.0 };

    // w = wscale · v keeps the L2 shrink O(1) per step.
    let mut v = vec![0.0; d];
    let mut wscale = 1.0;
    let mut b = 0.0;
    let mut step = 0.0f64;
    let mut order: Vec<usize> = (0..x.rows()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let eta = 1.0 / (alpha * (t0 + step));
            let p = wscale * x.row_dot(i, &v) + b;
            let g = loss.dloss(p, t[i]);
            wscale *= (1.0 - eta * alpha).max(1e-9);
            if g != 0.0 {
                x.add_row_scaled(i, -eta * g / wscale, &mut v);
                b -= eta * g * intercept_decay;
            }
            if wscale < 1e-9 {
                v.iter_mut().for_each(|x| *x *= wscale);
                wscale = 1.0;
            }
            step += 1.0;
        }
    }
    let w: Vec<f64> = v.iter().map(|x| x * wscale).collect();
    if !b.is_finite() || w.iter().any(|x| !x.is_finite()) {
        return Err(EvalError::Diverged("sgd_classifier".into()));
    }
    Ok(LinearModel { w, b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::matrix::DenseMatrix;

    #[test]
    fn separates_a_clear_margin() {
        let rows: Vec<Vec<f64>> = (0..100).map(|i| vec![if i % 2 == 0 { -1.0 } else { 1.0 }, (i % 7) as f64 / 7.0]).collect();
        let t: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { -1.0 } else { 1.0 }).collect();
        let x = FeatureMatrix::Dense(DenseMatrix::from_rows(&rows));
        for loss in [SgdLoss::Hinge, SgdLoss::Logistic] {
            let m = fit_binary(&x, &t, loss, 1e-4, 5, 9).unwrap();
            let correct = (0..100).filter(|&i| m.decision(&x, i).signum() == t[i]).count();
            assert_eq!(correct, 100, "{loss:?}");
        }
    }
}
