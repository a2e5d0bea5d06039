//! Average-reward R-learning over plan transitions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::planner::Plan;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RlError {
    #[error("reward must be finite, got {0}")]
    NonFiniteReward(f64),
    #[error("invalid rl config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RlConfig {
    pub alpha: f64,
    pub beta: f64,
    pub reward_scale: f64,
}

impl Default for RlConfig {
    fn default() -> Self {
        RlConfig { alpha: 0.5, beta: 0.5, reward_scale: 10.0 }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        let unit = |x: f64| x > 0.0 && x <= 1.0;
        if !unit(self.alpha) {
            return Err(RlError::Config(format!("alpha {} outside (0,1]", self.alpha)));
        }
        if !unit(self.beta) {
            return Err(RlError::Config(format!("beta {} outside (0,1]", self.beta)));
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return Err(RlError::Config(format!("rewardScale {} must be positive", self.reward_scale)));
        }
        Ok(())
    }
}

type Table = BTreeMap<String, BTreeMap<String, f64>>;

/// Learned R(s,a) and ρ(s,a), keyed by canonical state and action strings.
/// Absent entries are unexplored.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    #[serde(rename = "R")]
    r: Table,
    rho: Table,
}

impl ValueTable {
    pub fn r(&self, state: &str, action: &str) -> Option<f64> {
        self.r.get(state).and_then(|m| m.get(action)).copied()
    }

    pub fn rho(&self, state: &str, action: &str) -> Option<f64> {
        self.rho.get(state).and_then(|m| m.get(action)).copied()
    }

    /// max over stored actions of R(state, ·); 0 when none are stored.
    pub fn max_r(&self, state: &str) -> f64 {
        self.r
            .get(state)
            .and_then(|m| m.values().copied().reduce(f64::max))
            .unwrap_or(0.0)
    }

    pub fn set(&mut self, state: &str, action: &str, r: f64, rho: f64) {
        self.r.entry(state.to_string()).or_default().insert(action.to_string(), r);
        self.rho.entry(state.to_string()).or_default().insert(action.to_string(), rho);
    }

    pub fn len(&self) -> usize {
        self.rho.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// (state, action, R, ρ) for every stored entry, in key order.
    pub fn entries(&self) -> Vec<(String, String, f64, f64)> {
        let mut out = Vec::new();
        for (s, acts) in &self.rho {
            for (a, rho) in acts {
                out.push((s.clone(), a.clone(), self.r(s, a).unwrap_or(0.0), *rho));
            }
        }
        out
    }
}

/// Before/after values of a single update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ValueUpdate {
    pub reward: f64,
    pub r_before: f64,
    pub r_after: f64,
    pub rho_before: f64,
    pub rho_after: f64,
}

/// One R-learning step on (s, a) → s' with reward r.
///
/// R(s,a) ← (1−α)R(s,a) + α(r − ρ(s,a) + max R(s',·))
/// ρ(s,a) ← (1−β)ρ(s,a) + β(r + max R(s',·) − max R(s,·))
///
/// Every right-hand side reads pre-update values.
pub fn update(
    values: &mut ValueTable,
    state: &str,
    action: &str,
    next: &str,
    reward: f64,
    cfg: &RlConfig,
) -> Result<ValueUpdate, RlError> {
    if !reward.is_finite() {
        return Err(RlError::NonFiniteReward(reward));
    }
    let r0 = values.r(state, action).unwrap_or(0.0);
    let rho0 = values.rho(state, action).unwrap_or(0.0);
    let max_next = values.max_r(next);
    let max_here = values.max_r(state);
    let r1 = (1.0 - cfg.alpha) * r0 + cfg.alpha * (reward - rho0 + max_next);
    let rho1 = (1.0 - cfg.beta) * rho0 + cfg.beta * (reward + max_next - max_here);
    values.set(state, action, r1, rho1);
    Ok(ValueUpdate { reward, r_before: r0, r_after: r1, rho_before: rho0, rho_after: rho1 })
}

/// Σ ρ over the plan's contributing transitions; unexplored entries count 0.
pub fn plan_quality(plan: &Plan, values: &ValueTable) -> f64 {
    plan.transitions()
        .iter()
        .filter(|t| t.step.contributes())
        .map(|t| values.rho(&t.state_key(), &t.action_key()).unwrap_or(0.0))
        .sum()
}
