//! Shared reward: prediction quality plus cost-discounted information gain.
//!
//! The terminal reward is `r_total = r_rec + alpha * r_mig`. The prediction
//! part pays the model's confidence when it picks the target and a flat
//! penalty otherwise. The gain part measures how far retrieval moved the
//! prediction distribution away from the no-retrieval baseline (a KL
//! divergence), minus a per-strategy cost scaled by `eta` — so retrieval
//! only pays off when it actually changes the recommendation.


use num_traits::Float;

use crate::experts::Expert;
use crate::CoreError;

pub const DEFAULT_PROB_FLOOR: f64 = 1e-8;
pub const DEFAULT_ALPHA: f64 = 0.2;
pub const DEFAULT_ETA: f64 = 0.005;

/// Per-strategy retrieval cost, charged against information gain.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CostModel {
    /// One cost per strategy, in [`crate::experts::ALL_EXPERTS`] order.
    pub costs: [f64; 4],
}

impl Default for CostModel {
    fn default() -> Self {
        Self { costs: [0.0, 1.0, 2.0, 4.0] }
    }
}

impl CostModel {
    /// The no-retrieval strategy must be free and costs must not decrease
    /// with retrieval complexity.
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.costs[0] != 0.0 {
            return Err(CoreError::BadParam { name: "costs", why: "first cost must be 0" });
        }
        for w in self.costs.windows(2) {
            if !(w[1] >= w[0]) {
                return Err(CoreError::BadParam { name: "costs", why: "must be non-decreasing" });
            }
        }
        Ok(())
    }

    pub fn cost(&self, e: Expert) -> f64 {
        self.costs[e.index()]
    }
}

/// Every component of one instance's terminal reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardBreakdown {
    /// Confidence if correct, -0.1 otherwise.
    pub r_rec: f64,
    /// KL divergence of the prediction distribution from the no-retrieval
    /// baseline, in nats.
    pub delta_i: f64,
    /// Cost of the chosen strategy.
    pub cost: f64,
    /// `delta_i - eta * cost`.
    pub r_mig: f64,
    /// `r_rec + alpha * r_mig`.
    pub r_total: f64,
    pub alpha: f64,
    pub eta: f64,
}

/// Prediction reward: the distribution's confidence in the predicted
/// candidate when it is the target, a flat -0.1 otherwise.
pub fn rec_reward(probs: &[f64], predicted: usize, target: usize) -> f64 {
    if predicted == target {
        probs[predicted]
    } else {
        -0.1
    }
}

/// KL divergence in nats after flooring and renormalizing both inputs.
///
/// Both distributions are clamped to at least `floor` elementwise and
/// renormalized, which makes the value finite for any inputs of equal
/// length. Identical inputs give exactly zero.
pub fn kl_divergence(p: &[f64], q: &[f64], floor: f64) -> Result<f64, CoreError> {
    if p.len() != q.len() {
        return Err(CoreError::DimMismatch { expected: p.len(), got: q.len() });
    }
    if p.is_empty() {
        return Err(CoreError::Empty("distribution"));
    }
    if !(floor > 0.0) {
        return Err(CoreError::BadParam { name: "floor", why: "must be > 0" });
    }
    let clamp_sum = |x: &[f64]| -> f64 { x.iter().map(|&v| v.max(floor)).sum() };
    let ps = clamp_sum(p);
    let qs = clamp_sum(q);
    let mut kl = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        let pn = pi.max(floor) / ps;
        let qn = qi.max(floor) / qs;
        kl += pn * Float::ln(pn / qn);
    }
    if !kl.is_finite() {
        return Err(CoreError::NonFinite { what: "kl divergence" });
    }
    Ok(kl)
}

/// Information-gain reward: divergence from the baseline minus the charged
/// strategy cost.
pub fn mig_reward(delta_i: f64, cost: f64, eta: f64) -> f64 {
    delta_i - eta * cost
}

/// Assemble the full breakdown from its inputs.
pub fn total_reward(
    r_rec: f64,
    delta_i: f64,
    cost: f64,
    alpha: f64,
    eta: f64,
) -> RewardBreakdown {
    let r_mig = mig_reward(delta_i, cost, eta);
    RewardBreakdown { r_rec, delta_i, cost, r_mig, r_total: r_rec + alpha * r_mig, alpha, eta }
}
