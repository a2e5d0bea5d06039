//! Batch linear models fitted by accelerated proximal gradient (FISTA with
//! adaptive restart): logistic regression and squared-hinge linear SVC.

use serde::{Deserialize, Serialize};

use crate::evaluator::codec;
use crate::evaluator::matrix::FeatureMatrix;
use crate::evaluator::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Logistic,
    SquaredHinge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Penalty {
    L1,
    L2,
}

#[derive(Debug, Clone, Copy)]
pub struct LinearProblem {
    pub loss: Loss,
    pub penalty: Penalty,
    /// Inverse regularization strength.
    pub c: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

/// Binary linear decision function w·x + b.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    #[serde(with = "codec::f64s")]
    pub w: Vec<f64>,
    pub b: f64,
}

impl LinearModel {
    #[inline]
    pub fn decision(&self, x: &FeatureMatrix, i: usize) -> f64 {
        x.row_dot(i, &self.w) + self.b
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^z) without overflow.
#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Smooth part of the objective: (1/n)Σ sᵢ·loss(tᵢ zᵢ) (+ λ/2‖w‖² for L2),
/// with λ = 1/(C·n). Returns (value, ∂w, ∂b).
pub fn smooth_objective(
    x: &FeatureMatrix,
    t: &[f64],
    s: &[f64],
    w: &[f64],
    b: f64,
    problem: &LinearProblem,
) -> (f64, Vec<f64>, f64) {
    let n = x.rows() as f64;
    let lambda = 1.0 / (problem.c * n);
    let mut gw = vec![0.0; w.len()];
    let mut gb = 0.0;
    let mut value = 0.0;
    for i in 0..x.rows() {
        let m = t[i] * (x.row_dot(i, w) + b);
        let (l, dl) = match problem.loss {
            Loss::Logistic => (softplus(-m), -sigmoid(-m)),
            Loss::SquaredHinge => {
                let h = (1.0 - m).max(0.0);
                (h * h, -2.0 * h)
            }
        };
        value += s[i] * l;
        let coef = s[i] * dl * t[i] / n;
        if coef != 0.0 {
            x.add_row_scaled(i, coef, &mut gw);
            gb += coef;
        }
    }
    value /= n;
    if problem.penalty == Penalty::L2 {
        value += 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>();
        for (g, v) in gw.iter_mut().zip(w) {
            *g += lambda * v;
        }
    }
    (value, gw, gb)
}

/// Fits one binary problem; `t` holds ±1 targets and `s` sample weights.
pub fn fit_binary(
    x: &FeatureMatrix,
    t: &[f64],
    s: &[f64],
    problem: &LinearProblem,
    lipschitz_data: f64,
) -> Result<LinearModel, EvalError> {
    let n = x.rows() as f64;
    let d = x.cols();
    let lambda = 1.0 / (problem.c * n);
    let s_max = s.iter().copied().fold(0.0, f64::max);
    let curvature = match problem.loss {
        Loss::Logistic => 0.25,
        Loss::SquaredHinge => 2.0,
    };
    let mut lip = curvature * s_max * (lipschitz_data + n) / n;
    if problem.penalty == Penalty::L2 {
        lip += lambda;
    }
    let step = 1.0 / lip.max(1e-12);

    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut yw = w.clone();
    let mut yb = b;
    let mut tk = 1.0f64;
    for _ in 0..problem.max_iterations {
        let (_, gw, gb) = smooth_objective(x, t, s, &yw, yb, problem);
        let mut nw: Vec<f64> = yw.iter().zip(&gw).map(|(v, g)| v - step * g).collect();
        let nb = yb - step * gb;
        if problem.penalty == Penalty::L1 {
            let thr = step * lambda;
            for v in nw.iter_mut() {
                *v = v.signum() * (v.abs() - thr).max(0.0);
            }
        }
        let mut delta = (nb - b).abs();
        let mut scale = nb.abs().max(1.0);
        let mut restart_dot = (yb - nb) * (nb - b);
        for j in 0..d {
            delta = delta.max((nw[j] - w[j]).abs());
            scale = scale.max(nw[j].abs());
            restart_dot += (yw[j] - nw[j]) * (nw[j] - w[j]);
        }
        if !nb.is_finite() || nw.iter().any(|v| !v.is_finite()) {
            return Err(EvalError::Diverged("linear model".into()));
        }
        if restart_dot > 0.0 {
            tk = 1.0;
        }
        let tn = (1.0 + (1.0 + 4.0 * tk * tk).sqrt()) / 2.0;
        let mom = (tk - 1.0) / tn;
        for j in 0..d {
            yw[j] = nw[j] + mom * (nw[j] - w[j]);
        }
        yb = nb + mom * (nb - b);
        w = nw;
        b = nb;
        tk = tn;
        if delta <= problem.tolerance * scale {
            break;
        }
    }
    Ok(LinearModel { w, b })
}
