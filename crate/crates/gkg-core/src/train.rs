//! Policy-gradient training: router and alignment policies learn from a
//! shared sparse terminal reward via clipped proximal updates on
//! generalized-advantage estimates, while the candidate scorer learns from
//! contrastive preference pairs against a frozen reference. All parameter
//! groups step with Adam under a shared global gradient-norm clip.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::align::{AlignPolicy, AlignStep, N_ALIGN_ACTIONS};
use crate::experts::Expert;
use crate::pipeline::{Instance, Pipeline};
use crate::rec::{preference_loss_grad, Scorer};
use crate::reward::RewardBreakdown;
use crate::rng::stream_rng;
use crate::CoreError;
use crate::embed::TextEncoder;

pub const N_EXPERTS: usize = 4;

// ---------------------------------------------------------------------------
// Distribution helpers shared by every categorical policy in the crate.
// ---------------------------------------------------------------------------

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut out: Vec<f64> = logits.iter().map(|&l| Float::exp(l - max)).collect();
    let sum: f64 = out.iter().sum();
    for v in out.iter_mut() {
        *v /= sum;
    }
    out
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse: f64 = Float::ln(logits.iter().map(|&l| Float::exp(l - max)).sum::<f64>()) + max;
    logits.iter().map(|&l| l - lse).collect()
}

/// Draw an index from a probability vector using a single uniform variate.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Argmax with ties resolved to the lowest index.
pub fn argmax_first(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, Float::sqrt(var))
}

// ---------------------------------------------------------------------------
// Router policy.
// ---------------------------------------------------------------------------

/// Affine gating policy over the four retrieval strategies, with an affine
/// value head on the same features (the query embedding).
#[derive(Debug, Clone, PartialEq)]
pub struct RouterPolicy {
    dim: usize,
    /// Policy weights, `N_EXPERTS` rows by `dim` columns.
    pub w: Vec<f64>,
    /// Policy biases, one per strategy.
    pub b: Vec<f64>,
    /// Value head weights.
    pub vw: Vec<f64>,
    /// Value head bias.
    pub vb: f64,
}

/// Outcome of one routing decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RouterDecision {
    pub expert: Expert,
    pub logp: f64,
    pub value: f64,
}

impl RouterPolicy {
    /// Zero-initialized: uniform over strategies.
    pub fn new(dim: usize) -> Self {
        Self { dim, w: vec![0.0; N_EXPERTS * dim], b: vec![0.0; N_EXPERTS], vw: vec![0.0; dim], vb: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// State features: the query embedding widened to f64.
    pub fn features(&self, zq: &[f32]) -> Result<Vec<f64>, CoreError> {
        if zq.len() != self.dim {
            return Err(CoreError::DimMismatch { expected: self.dim, got: zq.len() });
        }
        Ok(zq.iter().map(|&x| x as f64).collect())
    }

    pub fn logits(&self, feat: &[f64]) -> [f64; N_EXPERTS] {
        debug_assert_eq!(feat.len(), self.dim);
        let mut out = [0.0; N_EXPERTS];
        for (e, slot) in out.iter_mut().enumerate() {
            let row = &self.w[e * self.dim..(e + 1) * self.dim];
            let mut acc = self.b[e];
            for (wi, xi) in row.iter().zip(feat) {
                acc += wi * xi;
            }
            *slot = acc;
        }
        out
    }

    pub fn probs(&self, feat: &[f64]) -> Vec<f64> {
        softmax(&self.logits(feat))
    }

    pub fn value(&self, feat: &[f64]) -> f64 {
        let mut acc = self.vb;
        for (wi, xi) in self.vw.iter().zip(feat) {
            acc += wi * xi;
        }
        acc
    }

    /// Pick a strategy: sampled during training, argmax under greedy mode.
    pub fn select<R: Rng + ?Sized>(&self, feat: &[f64], greedy: bool, rng: &mut R) -> RouterDecision {
        let logits = self.logits(feat);
        let action = if greedy {
            argmax_first(&logits)
        } else {
            sample_categorical(&softmax(&logits), rng)
        };
        let logp = log_softmax(&logits)[action];
        RouterDecision {
            expert: Expert::from_index(action).expect("expert index in range"),
            logp,
            value: self.value(feat),
        }
    }
}

// ---------------------------------------------------------------------------
// Advantage estimation and the clipped objective.
// ---------------------------------------------------------------------------

/// Generalized advantage estimates and discounted returns for one episode.
///
/// `rewards[t]` and `values[t]` are per-step; the value beyond the final
/// step is defined as zero. Advantages follow the backward recursion
/// `A_t = delta_t + gamma*lambda*A_{t+1}` with
/// `delta_t = r_t + gamma*V_{t+1} - V_t`; returns are
/// `G_t = r_t + gamma*G_{t+1}`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), CoreError> {
    if rewards.is_empty() {
        return Err(CoreError::Empty("trajectory"));
    }
    if rewards.len() != values.len() {
        return Err(CoreError::DimMismatch { expected: rewards.len(), got: values.len() });
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(CoreError::BadParam { name: "gamma", why: "must lie in (0, 1]" });
    }
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(CoreError::BadParam { name: "lambda", why: "must lie in (0, 1]" });
    }
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut ret = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = 0.0;
    let mut next_ret = 0.0;
    for t in (0..n).rev() {
        let delta = rewards[t] + gamma * next_value - values[t];
        next_adv = delta + gamma * lambda * next_adv;
        adv[t] = next_adv;
        next_ret = rewards[t] + gamma * next_ret;
        ret[t] = next_ret;
        next_value = values[t];
        if !adv[t].is_finite() || !ret[t].is_finite() {
            return Err(CoreError::NonFinite { what: "advantage" });
        }
    }
    Ok((adv, ret))
}

/// Pessimistic clipped policy objective:
/// `min(rho*A, clip(rho, 1-eps, 1+eps)*A)` with `rho = exp(logp - logp_old)`.
pub fn clipped_objective(logp_new: f64, logp_old: f64, advantage: f64, eps: f64) -> f64 {
    let rho = Float::exp(logp_new - logp_old);
    let clipped = rho.max(1.0 - eps).min(1.0 + eps);
    (rho * advantage).min(clipped * advantage)
}

/// Whether the unclipped branch is active, i.e. the objective still passes
/// gradient at this ratio/advantage pair.
fn clip_gradient_flows(rho: f64, advantage: f64, eps: f64) -> bool {
    if advantage >= 0.0 {
        rho < 1.0 + eps
    } else {
        rho > 1.0 - eps
    }
}

// ---------------------------------------------------------------------------
// Optimizer.
// ---------------------------------------------------------------------------

/// Adam over a parameter group that may be split across several slices.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }

    /// One update over segmented parameters; `params` and `grads` must list
    /// segments in the same order with matching lengths on every call.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<(), CoreError> {
        let total: usize = params.iter().map(|p| p.len()).sum();
        let gtotal: usize = grads.iter().map(|g| g.len()).sum();
        if total != gtotal {
            return Err(CoreError::DimMismatch { expected: total, got: gtotal });
        }
        if self.m.is_empty() {
            self.m = vec![0.0; total];
            self.v = vec![0.0; total];
        }
        if self.m.len() != total {
            return Err(CoreError::DimMismatch { expected: self.m.len(), got: total });
        }
        self.t += 1;
        let bc1 = 1.0 - Float::powi(self.beta1, self.t as i32);
        let bc2 = 1.0 - Float::powi(self.beta2, self.t as i32);
        let mut k = 0;
        for (pseg, gseg) in params.iter_mut().zip(grads) {
            if pseg.len() != gseg.len() {
                return Err(CoreError::DimMismatch { expected: pseg.len(), got: gseg.len() });
            }
            for (p, &g) in pseg.iter_mut().zip(gseg.iter()) {
                if !g.is_finite() {
                    return Err(CoreError::NonFinite { what: "gradient" });
                }
                self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
                self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
                let mhat = self.m[k] / bc1;
                let vhat = self.v[k] / bc2;
                *p -= self.lr * mhat / (Float::sqrt(vhat) + self.eps);
                k += 1;
            }
        }
        Ok(())
    }
}

/// Scale segmented gradients so their joint L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [&mut [f64]], max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for seg in grads.iter() {
        for &g in seg.iter() {
            sq += g * g;
        }
    }
    let norm = Float::sqrt(sq);
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for seg in grads.iter_mut() {
            for g in seg.iter_mut() {
                *g *= scale;
            }
        }
    }
    norm
}

// ---------------------------------------------------------------------------
// Configuration and trajectories.
// ---------------------------------------------------------------------------

/// Replaces the learned router during baseline runs. The router's parameters
/// receive no updates while an override is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouterOverride {
    /// Uniform-random strategy per instance.
    Random,
    /// Always the strategy with this index (0-3).
    Fixed(usize),
}

/// Training hyperparameters. Defaults follow the published settings table;
/// fields the sources leave open are documented as local defaults.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub clip_eps: f64,
    pub update_epochs: usize,
    pub batch_size: usize,
    pub buffer_size: usize,
    pub grad_max_norm: f64,
    /// Preference-loss temperature.
    pub beta: f64,
    /// Hard negatives mined per instance.
    pub n_hard: usize,
    /// Weight of the information-gain reward inside the total reward.
    pub alpha: f64,
    /// Cost penalty inside the information-gain reward.
    pub eta: f64,
    pub value_loss_coef: f64,
    /// Probability floor applied before KL divergence.
    pub prob_floor: f64,
    /// Outer iterations; each consumes `buffer_size` instances.
    pub iterations: usize,
    pub seed: u64,
    /// Holdout instances scored for the per-iteration accuracy column.
    pub holdout_cap: usize,
    /// Refresh the frozen preference reference every this many iterations
    /// (0 = only the snapshot taken at training start).
    pub ref_refresh_every: usize,
    /// Diagonal scale of the recommender's initial interaction matrix: the
    /// untrained scorer ranks by `scorer_init * cos(context, candidate)`,
    /// giving context use (and thus retrieval) immediate value. 0 starts
    /// from the uniform scorer.
    pub scorer_init: f64,
    /// Initial keep-vs-stop bias of the alignment policy: sampled rollouts
    /// start out keeping most retrieved statements instead of stopping a
    /// third of the time per step, so retrieval value is visible to the
    /// router and scorer from the first iteration. 0 starts uniform.
    pub align_keep_bias: f64,
    pub router_override: Option<RouterOverride>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            gamma: 0.99,
            lambda: 0.95,
            clip_eps: 0.2,
            update_epochs: 3,
            batch_size: 64,
            buffer_size: 2048,
            grad_max_norm: 0.5,
            beta: 0.2,
            n_hard: 10,
            alpha: 0.2,
            eta: 0.005,
            value_loss_coef: 0.5,
            prob_floor: 1e-8,
            iterations: 10,
            seed: 0,
            holdout_cap: 128,
            ref_refresh_every: 0,
            scorer_init: 8.0,
            align_keep_bias: 2.0,
            router_override: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        if !(self.lr > 0.0) {
            return Err(CoreError::BadParam { name: "lr", why: "must be > 0" });
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(CoreError::BadParam { name: "gamma", why: "must lie in (0, 1]" });
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(CoreError::BadParam { name: "lambda", why: "must lie in (0, 1]" });
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(CoreError::BadParam { name: "clip_eps", why: "must lie in (0, 1)" });
        }
        if self.update_epochs == 0 {
            return Err(CoreError::BadParam { name: "update_epochs", why: "must be >= 1" });
        }
        if self.batch_size == 0 {
            return Err(CoreError::BadParam { name: "batch_size", why: "must be >= 1" });
        }
        if self.buffer_size == 0 {
            return Err(CoreError::BadParam { name: "buffer_size", why: "must be >= 1" });
        }
        if !(self.grad_max_norm > 0.0) {
            return Err(CoreError::BadParam { name: "grad_max_norm", why: "must be > 0" });
        }
        if !(self.beta > 0.0) {
            return Err(CoreError::BadParam { name: "beta", why: "must be > 0" });
        }
        if self.n_hard == 0 {
            return Err(CoreError::BadParam { name: "n_hard", why: "must be >= 1" });
        }
        if !(self.alpha >= 0.0) {
            return Err(CoreError::BadParam { name: "alpha", why: "must be >= 0" });
        }
        if !(self.eta >= 0.0) {
            return Err(CoreError::BadParam { name: "eta", why: "must be >= 0" });
        }
        if !(self.value_loss_coef > 0.0) {
            return Err(CoreError::BadParam { name: "value_loss_coef", why: "must be > 0" });
        }
        if !(self.prob_floor > 0.0) {
            return Err(CoreError::BadParam { name: "prob_floor", why: "must be > 0" });
        }
        if self.iterations == 0 {
            return Err(CoreError::BadParam { name: "iterations", why: "must be >= 1" });
        }
        if !(self.scorer_init >= 0.0 && self.scorer_init.is_finite()) {
            return Err(CoreError::BadParam {
                name: "scorer_init",
                why: "must be finite and >= 0",
            });
        }
        if !(self.align_keep_bias >= 0.0 && self.align_keep_bias.is_finite()) {
            return Err(CoreError::BadParam {
                name: "align_keep_bias",
                why: "must be finite and >= 0",
            });
        }
        if let Some(RouterOverride::Fixed(e)) = self.router_override {
            if e >= N_EXPERTS {
                return Err(CoreError::BadParam { name: "router_override", why: "index out of range" });
            }
        }
        Ok(())
    }
}

/// Stored preference-learning inputs for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceData {
    /// Context embedding (query plus aligned knowledge).
    pub ctx: Vec<f32>,
    /// Candidate embeddings, pool order.
    pub pool: Vec<Vec<f32>>,
    pub target: usize,
    /// Hard negatives mined at rollout time.
    pub negatives: Vec<usize>,
}

/// One completed episode: a routing decision, the alignment decisions, the
/// terminal reward, and the stored preference inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub router_features: Vec<f64>,
    pub router_action: usize,
    pub router_logp: f64,
    pub router_value: f64,
    pub align_steps: Vec<AlignStep>,
    pub reward: RewardBreakdown,
    pub pref: PreferenceData,
    /// Per-step advantages (router first), filled by [`Trajectory::compute_advantages`].
    pub advantages: Vec<f64>,
    /// Per-step discounted returns, same layout.
    pub returns: Vec<f64>,
}

impl Trajectory {
    pub fn n_steps(&self) -> usize {
        1 + self.align_steps.len()
    }

    /// Fill advantages and returns from the sparse terminal reward.
    pub fn compute_advantages(&mut self, gamma: f64, lambda: f64) -> Result<(), CoreError> {
        let n = self.n_steps();
        let mut rewards = vec![0.0; n];
        rewards[n - 1] = self.reward.r_total;
        let mut values = Vec::with_capacity(n);
        values.push(self.router_value);
        values.extend(self.align_steps.iter().map(|s| s.value));
        let (adv, ret) = compute_gae(&rewards, &values, gamma, lambda)?;
        self.advantages = adv;
        self.returns = ret;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// The coordinated update.
// ---------------------------------------------------------------------------

/// Adam state for the five independent parameter groups.
#[derive(Debug, Clone)]
pub struct Optimizers {
    pub router_policy: Adam,
    pub router_value: Adam,
    pub align_policy: Adam,
    pub align_value: Adam,
    pub scorer: Adam,
}

impl Optimizers {
    pub fn new(lr: f64) -> Self {
        Self {
            router_policy: Adam::new(lr),
            router_value: Adam::new(lr),
            align_policy: Adam::new(lr),
            align_value: Adam::new(lr),
            scorer: Adam::new(lr),
        }
    }
}

/// Mean losses across the minibatch updates of one call.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateReport {
    pub router_policy_loss: f64,
    pub align_policy_loss: f64,
    pub router_value_loss: f64,
    pub align_value_loss: f64,
    pub preference_loss: f64,
    /// Mean pre-clip joint gradient norm of the policy/value groups.
    pub grad_norm: f64,
    pub minibatches: usize,
}

/// Normalize a pooled advantage list to mean 0, std 1 (guarded), writing the
/// results back through the provided setter. Pools smaller than two keep
/// their raw values so a lone positive advantage still moves its policy.
fn normalize_pool(values: Vec<f64>, mut write: impl FnMut(usize, f64)) {
    if values.len() < 2 {
        return;
    }
    let (mean, std) = mean_std(&values);
    let denom = std.max(1e-8);
    for (i, v) in values.into_iter().enumerate() {
        write(i, (v - mean) / denom);
    }
}

/// One coordinated update over a buffer of completed trajectories.
///
/// Computes advantages, normalizes them per agent across the whole buffer,
/// then runs `update_epochs` passes of shuffled minibatches: clipped policy
/// ascent for the router and alignment policies, value regression for both
/// value heads, and the preference update for the scorer. Policy/value
/// gradients are jointly norm-clipped; the scorer's gradient is clipped to
/// the same bound separately since it optimizes a different objective.
pub fn update_policies(
    router: &mut RouterPolicy,
    align: &mut AlignPolicy,
    scorer: &mut Scorer,
    reference: &Scorer,
    batch: &mut [Trajectory],
    cfg: &TrainConfig,
    opt: &mut Optimizers,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateReport, CoreError> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(CoreError::Empty("trajectory batch"));
    }
    for traj in batch.iter_mut() {
        if !traj.reward.r_total.is_finite() {
            return Err(CoreError::NonFinite { what: "terminal reward" });
        }
        traj.compute_advantages(cfg.gamma, cfg.lambda)?;
    }
    // Per-agent advantage normalization across the whole buffer.
    let router_pool: Vec<f64> = batch.iter().map(|t| t.advantages[0]).collect();
    normalize_pool(router_pool, |i, v| batch[i].advantages[0] = v);
    let mut align_index = Vec::new();
    let mut align_pool = Vec::new();
    for (ti, t) in batch.iter().enumerate() {
        for si in 1..t.n_steps() {
            align_index.push((ti, si));
            align_pool.push(t.advantages[si]);
        }
    }
    normalize_pool(align_pool, |i, v| {
        let (ti, si) = align_index[i];
        batch[ti].advantages[si] = v;
    });

    let dim = router.dim();
    let fdim = align.feat_dim();
    let sdim = scorer.dim();
    let train_router = cfg.router_override.is_none();
    let mut report = UpdateReport::default();
    let mut order: Vec<usize> = (0..batch.len()).collect();

    for _epoch in 0..cfg.update_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            // Gradient buffers per parameter group.
            let mut g_rw = vec![0.0; N_EXPERTS * dim];
            let mut g_rb = vec![0.0; N_EXPERTS];
            let mut g_rvw = vec![0.0; dim];
            let mut g_rvb = [0.0f64];
            let mut g_aw = vec![0.0; N_ALIGN_ACTIONS * fdim];
            let mut g_ab = vec![0.0; N_ALIGN_ACTIONS];
            let mut g_avw = vec![0.0; fdim];
            let mut g_avb = [0.0f64];
            let mut g_sw = vec![0.0; sdim * sdim];

            let n_router = chunk.len() as f64;
            let n_align: usize = chunk.iter().map(|&i| batch[i].align_steps.len()).sum();
            let mut router_obj = 0.0;
            let mut align_obj = 0.0;
            let mut router_vloss = 0.0;
            let mut align_vloss = 0.0;
            let mut pref_loss = 0.0;

            for &ti in chunk {
                let traj = &batch[ti];
                if train_router {
                    // Router policy: clipped ascent on the normalized advantage.
                    let feat = &traj.router_features;
                    let logits = router.logits(feat);
                    let probs = softmax(&logits);
                    let logp_new = log_softmax(&logits)[traj.router_action];
                    let a = traj.advantages[0];
                    let rho = Float::exp(logp_new - traj.router_logp);
                    router_obj += clipped_objective(logp_new, traj.router_logp, a, cfg.clip_eps);
                    if clip_gradient_flows(rho, a, cfg.clip_eps) {
                        // d(-objective)/d logit_j = -rho*A*(1[j=a] - pi_j).
                        let scale = -rho * a / n_router;
                        for j in 0..N_EXPERTS {
                            let ind = if j == traj.router_action { 1.0 } else { 0.0 };
                            let gl = scale * (ind - probs[j]);
                            g_rb[j] += gl;
                            let row = &mut g_rw[j * dim..(j + 1) * dim];
                            for (gw, xi) in row.iter_mut().zip(feat) {
                                *gw += gl * xi;
                            }
                        }
                    }
                    // Router value regression toward the discounted return.
                    let v = router.value(feat);
                    let err = v - traj.returns[0];
                    router_vloss += 0.5 * cfg.value_loss_coef * err * err / n_router;
                    let dv = cfg.value_loss_coef * err / n_router;
                    for (gw, xi) in g_rvw.iter_mut().zip(feat) {
                        *gw += dv * xi;
                    }
                    g_rvb[0] += dv;
                }

                // Alignment steps.
                for (si, step) in traj.align_steps.iter().enumerate() {
                    let a = traj.advantages[si + 1];
                    let g_ret = traj.returns[si + 1];
                    let logits = align.logits(&step.features);
                    let probs = softmax(&logits);
                    let logp_new = log_softmax(&logits)[step.action];
                    let rho = Float::exp(logp_new - step.logp);
                    align_obj += clipped_objective(logp_new, step.logp, a, cfg.clip_eps);
                    if n_align > 0 && clip_gradient_flows(rho, a, cfg.clip_eps) {
                        let scale = -rho * a / n_align as f64;
                        for j in 0..N_ALIGN_ACTIONS {
                            let ind = if j == step.action { 1.0 } else { 0.0 };
                            let gl = scale * (ind - probs[j]);
                            g_ab[j] += gl;
                            let row = &mut g_aw[j * fdim..(j + 1) * fdim];
                            for (gw, xi) in row.iter_mut().zip(&step.features) {
                                *gw += gl * xi;
                            }
                        }
                    }
                    if n_align > 0 {
                        let v = align.value(&step.features);
                        let err = v - g_ret;
                        align_vloss += 0.5 * cfg.value_loss_coef * err * err / n_align as f64;
                        let dv = cfg.value_loss_coef * err / n_align as f64;
                        for (gw, xi) in g_avw.iter_mut().zip(&step.features) {
                            *gw += dv * xi;
                        }
                        g_avb[0] += dv;
                    }
                }

                // Preference update inputs.
                let pref = &traj.pref;
                let pool_refs: Vec<&[f32]> = pref.pool.iter().map(|v| v.as_slice()).collect();
                let (l, g) = preference_loss_grad(
                    scorer,
                    reference,
                    &pref.ctx,
                    &pool_refs,
                    pref.target,
                    &pref.negatives,
                    cfg.beta,
                )?;
                pref_loss += l / n_router;
                for (acc, gi) in g_sw.iter_mut().zip(&g) {
                    *acc += gi / n_router;
                }
            }

            let router_loss = -router_obj / n_router;
            let align_loss = if n_align > 0 { -align_obj / n_align as f64 } else { 0.0 };
            for (name, l) in [
                ("router policy loss", router_loss),
                ("alignment policy loss", align_loss),
                ("router value loss", router_vloss),
                ("alignment value loss", align_vloss),
                ("preference loss", pref_loss),
            ] {
                if !l.is_finite() {
                    return Err(CoreError::NonFinite { what: name });
                }
            }

            // Joint clip over the policy/value groups, then per-group steps.
            let norm = {
                let mut segs: Vec<&mut [f64]> = Vec::new();
                if train_router {
                    segs.push(&mut g_rw);
                    segs.push(&mut g_rb);
                    segs.push(&mut g_rvw);
                    segs.push(&mut g_rvb);
                }
                segs.push(&mut g_aw);
                segs.push(&mut g_ab);
                segs.push(&mut g_avw);
                segs.push(&mut g_avb);
                clip_global_norm(&mut segs, cfg.grad_max_norm)
            };
            if train_router {
                let mut vb = [router.vb];
                opt.router_policy.step(
                    &mut [router.w.as_mut_slice(), router.b.as_mut_slice()],
                    &[g_rw.as_slice(), g_rb.as_slice()],
                )?;
                opt.router_value.step(
                    &mut [router.vw.as_mut_slice(), &mut vb],
                    &[g_rvw.as_slice(), &g_rvb],
                )?;
                router.vb = vb[0];
            }
            {
                let mut vb = [align.vb];
                opt.align_policy.step(
                    &mut [align.w.as_mut_slice(), align.b.as_mut_slice()],
                    &[g_aw.as_slice(), g_ab.as_slice()],
                )?;
                opt.align_value.step(
                    &mut [align.vw.as_mut_slice(), &mut vb],
                    &[g_avw.as_slice(), &g_avb],
                )?;
                align.vb = vb[0];
            }
            {
                let mut segs = [g_sw.as_mut_slice()];
                clip_global_norm(&mut segs, cfg.grad_max_norm);
                opt.scorer.step(&mut [scorer.w.as_mut_slice()], &[g_sw.as_slice()])?;
            }

            report.router_policy_loss += router_loss;
            report.align_policy_loss += align_loss;
            report.router_value_loss += router_vloss;
            report.align_value_loss += align_vloss;
            report.preference_loss += pref_loss;
            report.grad_norm += norm;
            report.minibatches += 1;
        }
    }
    let n = report.minibatches.max(1) as f64;
    report.router_policy_loss /= n;
    report.align_policy_loss /= n;
    report.router_value_loss /= n;
    report.align_value_loss /= n;
    report.preference_loss /= n;
    report.grad_norm /= n;
    Ok(report)
}

// ---------------------------------------------------------------------------
// The outer training loop.
// ---------------------------------------------------------------------------

/// One row of the per-iteration metrics log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationStats {
    pub iteration: usize,
    pub mean_r_total: f64,
    pub mean_delta_i: f64,
    pub mean_cost: f64,
    pub acc_holdout: f64,
    pub expert_frac: [f64; N_EXPERTS],
}

pub const METRICS_CSV_HEADER: &str =
    "iteration,mean_r_total,mean_delta_i,mean_cost,acc_holdout,frac_e1,frac_e2,frac_e3,frac_e4";

impl IterationStats {
    /// Fixed-precision CSV row matching [`METRICS_CSV_HEADER`].
    pub fn csv_row(&self) -> String {
        alloc::format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.iteration,
            self.mean_r_total,
            self.mean_delta_i,
            self.mean_cost,
            self.acc_holdout,
            self.expert_frac[0],
            self.expert_frac[1],
            self.expert_frac[2],
            self.expert_frac[3],
        )
    }
}

/// Everything a finished training run hands back.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub router: RouterPolicy,
    pub align: AlignPolicy,
    pub scorer: Scorer,
    pub reference: Scorer,
    pub stats: Vec<IterationStats>,
}

/// Uniform-without-replacement instance sampler that reshuffles per pass.
struct InstanceSampler {
    order: Vec<usize>,
    cursor: usize,
}

impl InstanceSampler {
    fn new(n: usize) -> Self {
        Self { order: (0..n).collect(), cursor: n }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> usize {
        if self.cursor >= self.order.len() {
            self.order.shuffle(rng);
            self.cursor = 0;
        }
        let i = self.order[self.cursor];
        self.cursor += 1;
        i
    }
}

/// Run the full training loop: repeated buffer collection via sampled
/// rollouts, coordinated policy/value/preference updates, and per-iteration
/// metrics including greedy holdout accuracy.
pub fn train<E: TextEncoder>(
    pipe: &Pipeline<'_, E>,
    instances: &[Instance],
    holdout: &[Instance],
    cfg: &TrainConfig,
) -> Result<TrainRun, CoreError> {
    cfg.validate()?;
    pipe.validate()?;
    if instances.is_empty() {
        return Err(CoreError::Empty("training set"));
    }
    let dim = pipe.encoder.dim();
    let mut router = RouterPolicy::new(dim);
    let mut align = AlignPolicy::with_keep_bias(dim, cfg.align_keep_bias);
    let mut scorer = Scorer::identity(dim, cfg.scorer_init);
    let mut reference = scorer.clone();
    let mut opt = Optimizers::new(cfg.lr);
    let mut rollout_rng = stream_rng(cfg.seed, 0x01);
    let mut update_rng = stream_rng(cfg.seed, 0x02);
    let mut order_rng = stream_rng(cfg.seed, 0x03);
    let mut sampler = InstanceSampler::new(instances.len());
    let mut stats = Vec::with_capacity(cfg.iterations);

    for iteration in 0..cfg.iterations {
        if cfg.ref_refresh_every > 0 && iteration > 0 && iteration % cfg.ref_refresh_every == 0 {
            reference = scorer.clone();
        }
        let mut buffer = Vec::with_capacity(cfg.buffer_size);
        for _ in 0..cfg.buffer_size {
            let idx = sampler.next(&mut order_rng);
            let traj = pipe.rollout(
                &router,
                &align,
                &scorer,
                &instances[idx],
                cfg,
                false,
                &mut rollout_rng,
            )?;
            buffer.push(traj);
        }
        let n = buffer.len() as f64;
        let mean_r_total = buffer.iter().map(|t| t.reward.r_total).sum::<f64>() / n;
        let mean_delta_i = buffer.iter().map(|t| t.reward.delta_i).sum::<f64>() / n;
        let mean_cost = buffer.iter().map(|t| t.reward.cost).sum::<f64>() / n;
        let mut counts = [0usize; N_EXPERTS];
        for t in &buffer {
            counts[t.router_action] += 1;
        }
        let expert_frac = counts.map(|c| c as f64 / n);

        update_policies(
            &mut router,
            &mut align,
            &mut scorer,
            &reference,
            &mut buffer,
            cfg,
            &mut opt,
            &mut update_rng,
        )?;

        let slice = &holdout[..holdout.len().min(cfg.holdout_cap)];
        let mut correct = 0usize;
        for inst in slice {
            let out = pipe.infer(&router, &align, &scorer, inst, &crate::clock::NullClock)?;
            if out.predicted == inst.target {
                correct += 1;
            }
        }
        let acc_holdout = if slice.is_empty() { 0.0 } else { correct as f64 / slice.len() as f64 };

        stats.push(IterationStats {
            iteration,
            mean_r_total,
            mean_delta_i,
            mean_cost,
            acc_holdout,
            expert_frac,
        });
    }
    Ok(TrainRun { router, align, scorer, reference, stats })
}

// ---------------------------------------------------------------------------
