//! Candidate scoring and preference-based updates.
//!
//! The scorer is bilinear and bias-free: a candidate's score is
//! `ctx^T W item` over unit-norm embeddings, and the policy over a candidate
//! pool is the softmax of the scores. A frozen copy of the scorer serves as
//! the reference. The update pulls the target's score above mined hard
//! negatives through a logistic preference loss on score margins relative to
//! the reference; because both policies share the pool, their normalizers
//! cancel and only raw score differences matter.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::prompts;
use crate::train::{argmax_first, log_softmax, softmax};
use crate::{CoreError, TextGenerator};

/// Bias-free bilinear candidate scorer.
#[derive(Debug, Clone, PartialEq)]
pub struct Scorer {
    dim: usize,
    /// Row-major `dim x dim` interaction matrix.
    pub w: Vec<f64>,
}

impl Scorer {
    /// Zero-initialized scorer: uniform over any candidate pool.
    pub fn new(dim: usize) -> Self {
        Self { dim, w: vec![0.0; dim * dim] }
    }

    /// Scaled-identity scorer: scores `scale * cos(ctx, item)` before any
    /// training, so candidates that share text with the context (directly or
    /// through appended knowledge) start ahead. Scale 0 is the zero scorer.
    pub fn identity(dim: usize, scale: f64) -> Self {
        let mut s = Self::new(dim);
        for i in 0..dim {
            s.w[i * dim + i] = scale;
        }
        s
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Left product `ctx^T W`, reusable across one pool's candidates.
    pub fn context_projection(&self, ctx: &[f32]) -> Result<Vec<f64>, CoreError> {
        if ctx.len() != self.dim {
            return Err(CoreError::DimMismatch { expected: self.dim, got: ctx.len() });
        }
        let mut proj = vec![0.0f64; self.dim];
        for (i, &c) in ctx.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let row = &self.w[i * self.dim..(i + 1) * self.dim];
            let c = c as f64;
            for (p, wi) in proj.iter_mut().zip(row) {
                *p += c * wi;
            }
        }
        Ok(proj)
    }

    pub fn score_with(&self, proj: &[f64], item: &[f32]) -> Result<f64, CoreError> {
        if item.len() != self.dim {
            return Err(CoreError::DimMismatch { expected: self.dim, got: item.len() });
        }
        Ok(proj.iter().zip(item).map(|(p, &x)| p * x as f64).sum())
    }

    /// Raw scores for every candidate in the pool.
    pub fn scores(&self, ctx: &[f32], items: &[&[f32]]) -> Result<Vec<f64>, CoreError> {
        let proj = self.context_projection(ctx)?;
        items.iter().map(|it| self.score_with(&proj, it)).collect()
    }

    /// Softmax policy over the pool.
    pub fn probs(&self, ctx: &[f32], items: &[&[f32]]) -> Result<Vec<f64>, CoreError> {
        if items.is_empty() {
            return Err(CoreError::Empty("candidate pool"));
        }
        Ok(softmax(&self.scores(ctx, items)?))
    }
}

/// Greedy pick over pool probabilities: (index, confidence). Ties go to the
/// lowest index.
pub fn predict_greedy(probs: &[f64]) -> (usize, f64) {
    let i = argmax_first(probs);
    (i, probs[i])
}

/// 0-based rank of `target` when candidates sort by probability descending,
/// index ascending. Recall@k holds when the rank is below k.
pub fn rank_of(probs: &[f64], target: usize) -> usize {
    probs
        .iter()
        .enumerate()
        .filter(|&(i, &p)| p > probs[target] || (p == probs[target] && i < target))
        .count()
}

/// The `n` most confusable non-target candidates under the current policy:
/// probability descending, index ascending.
pub fn mine_hard_negatives(probs: &[f64], target: usize, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).filter(|&i| i != target).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    idx.truncate(n);
    idx
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    let m = if x > 0.0 { x } else { 0.0 };
    m + Float::ln_1p(Float::exp(-Float::abs(x)))
}

/// Logistic sigmoid, saturation-safe.
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + Float::exp(-x))
    } else {
        let e = Float::exp(x);
        e / (1.0 + e)
    }
}

/// Preference loss and its gradient in the scorer weights.
///
/// For each mined negative `o-`, the margin is
/// `u = (s(target) - s(o-)) - (s_ref(target) - s_ref(o-))`
/// and the loss is the mean of `softplus(-beta * u)`. Shared normalizers
/// cancel in `u`, so only raw scores enter. The gradient is
/// `mean over pairs of -beta * sigmoid(-beta*u) * outer(ctx, z_target - z_neg)`.
///
/// Returns `(loss, gradient)` with the gradient laid out like [`Scorer::w`].
pub fn preference_loss_grad(
    scorer: &Scorer,
    reference: &Scorer,
    ctx: &[f32],
    items: &[&[f32]],
    target: usize,
    negatives: &[usize],
    beta: f64,
) -> Result<(f64, Vec<f64>), CoreError> {
    if scorer.dim() != reference.dim() {
        return Err(CoreError::DimMismatch { expected: scorer.dim(), got: reference.dim() });
    }
    if target >= items.len() {
        return Err(CoreError::BadParam { name: "target", why: "outside candidate pool" });
    }
    if negatives.is_empty() {
        return Err(CoreError::Empty("negative set"));
    }
    if !(beta > 0.0) {
        return Err(CoreError::BadParam { name: "beta", why: "must be > 0" });
    }
    let dim = scorer.dim();
    let s_w = scorer.scores(ctx, items)?;
    let s_r = reference.scores(ctx, items)?;
    let n = negatives.len() as f64;
    let mut loss = 0.0;
    // The context is fixed across pairs, so the per-pair rank-one gradients
    // collapse into a single outer product with a weighted difference vector.
    let mut diff = vec![0.0f64; dim];
    for &neg in negatives {
        if neg >= items.len() || neg == target {
            return Err(CoreError::BadParam { name: "negatives", why: "index invalid" });
        }
        let u = (s_w[target] - s_w[neg]) - (s_r[target] - s_r[neg]);
        if !u.is_finite() {
            return Err(CoreError::NonFinite { what: "preference margin" });
        }
        loss += softplus(-beta * u) / n;
        let coef = -beta * sigmoid(-beta * u) / n;
        let zt = items[target];
        let zn = items[neg];
        for j in 0..dim {
            diff[j] += coef * (zt[j] as f64 - zn[j] as f64);
        }
    }
    let mut grad = vec![0.0f64; dim * dim];
    for i in 0..dim {
        let ci = ctx[i] as f64;
        if ci == 0.0 {
            continue;
        }
        let row = &mut grad[i * dim..(i + 1) * dim];
        for (g, d) in row.iter_mut().zip(&diff) {
            *g = ci * d;
        }
    }
    Ok((loss, grad))
}

/// Ask a generation backend to pick a candidate.
///
/// Renders the selection prompt, runs the backend, and parses the reply.
/// `Ok(None)` means the backend answered but named no valid candidate.
pub fn llm_predict<G: TextGenerator + ?Sized>(
    backend: &G,
    history: &[String],
    statements: &[String],
    candidates: &[String],
    temperature: f64,
) -> Result<Option<usize>, CoreError> {
    if candidates.is_empty() {
        return Err(CoreError::Empty("candidate pool"));
    }
    let prompt = prompts::render_recommend(history, statements, candidates);
    let reply = backend.generate(&prompt, temperature)?;
    Ok(prompts::parse_option(&reply, candidates.len()))
}

/// Per-pool log-probabilities, for reporting and diagnostics.
pub fn pool_log_probs(scorer: &Scorer, ctx: &[f32], items: &[&[f32]]) -> Result<Vec<f64>, CoreError> {
    Ok(log_softmax(&scorer.scores(ctx, items)?))
}
