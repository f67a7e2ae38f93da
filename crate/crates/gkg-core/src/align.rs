//! Statement alignment: a learned sequential editor over drafted evidence.
//!
//! Retrieved triples are verbalized into an ordered draft of statements. The
//! alignment policy walks the draft once, deciding per statement to keep it,
//! drop it, or stop the pass entirely (discarding the rest). Both the policy
//! and its value head are affine in a per-step feature vector combining the
//! query embedding, the statement embedding, and three progress scalars.
//!
//! A zero-initialized policy keeps everything under greedy decoding, so an
//! untrained pipeline degrades to pass-through rather than to empty evidence.

use alloc::vec::Vec;

use rand::Rng;

use crate::train::{argmax_first, log_softmax, sample_categorical, softmax};
use crate::CoreError;

pub const N_ALIGN_ACTIONS: usize = 3;

/// Per-statement edit decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignAction {
    /// Retain the statement and move on.
    Keep,
    /// Discard the statement and move on.
    Drop,
    /// Discard the statement and end the pass; the rest is discarded too.
    Stop,
}

pub const ALIGN_ACTIONS: [AlignAction; N_ALIGN_ACTIONS] =
    [AlignAction::Keep, AlignAction::Drop, AlignAction::Stop];

impl AlignAction {
    pub fn index(self) -> usize {
        match self {
            AlignAction::Keep => 0,
            AlignAction::Drop => 1,
            AlignAction::Stop => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<AlignAction> {
        ALIGN_ACTIONS.get(i).copied()
    }
}

/// Kept draft positions implied by an action sequence. `Stop` is terminal;
/// anything after it is ignored.
pub fn kept_from_actions(actions: &[AlignAction]) -> Vec<usize> {
    let mut kept = Vec::new();
    for (t, a) in actions.iter().enumerate() {
        match a {
            AlignAction::Keep => kept.push(t),
            AlignAction::Drop => {}
            AlignAction::Stop => break,
        }
    }
    kept
}

/// One recorded decision, carrying what the update step needs to replay it.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignStep {
    /// Feature vector the decision was made from.
    pub features: Vec<f64>,
    /// Chosen action index (see [`AlignAction`]).
    pub action: usize,
    /// Log-probability of the chosen action at decision time.
    pub logp: f64,
    /// Value head estimate at decision time.
    pub value: f64,
}

/// Result of one alignment pass.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AlignOutcome {
    /// Kept positions into the draft, ascending.
    pub kept: Vec<usize>,
    /// Decisions in order; at most one per draft statement.
    pub steps: Vec<AlignStep>,
}

/// Affine keep/drop/stop policy plus its value head.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignPolicy {
    dim: usize,
    /// Policy weights, `N_ALIGN_ACTIONS` rows by `feat_dim` columns.
    pub w: Vec<f64>,
    /// Policy biases, one per action.
    pub b: Vec<f64>,
    /// Value head weights, `feat_dim` long.
    pub vw: Vec<f64>,
    /// Value head bias.
    pub vb: f64,
}

impl AlignPolicy {
    /// Zero-initialized policy over `dim`-dimensional embeddings.
    pub fn new(dim: usize) -> Self {
        let f = Self::feature_len(dim);
        Self {
            dim,
            w: alloc::vec![0.0; N_ALIGN_ACTIONS * f],
            b: alloc::vec![0.0; N_ALIGN_ACTIONS],
            vw: alloc::vec![0.0; f],
            vb: 0.0,
        }
    }

    /// Policy initialized to trust retrieval: the keep bias is `+bias` and the
    /// stop bias `-bias`, so sampled scans keep most statements and rarely
    /// stop early, while greedy decoding still keeps everything (as at zero
    /// init). Without this tilt a fresh policy samples stop with probability
    /// 1/3 per step, so almost no retrieved statement survives into the
    /// prediction context during early training and neither the router nor
    /// the scorer ever sees what retrieval is worth; pruning is the behavior
    /// to learn, not the place to start.
    pub fn with_keep_bias(dim: usize, bias: f64) -> Self {
        let mut p = Self::new(dim);
        p.b[AlignAction::Keep.index()] = bias;
        p.b[AlignAction::Stop.index()] = -bias;
        p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Feature length: query + statement embeddings + three progress scalars.
    pub fn feature_len(dim: usize) -> usize {
        2 * dim + 3
    }

    pub fn feat_dim(&self) -> usize {
        Self::feature_len(self.dim)
    }

    /// Assemble the step-`t` feature vector.
    ///
    /// Layout: `[query embedding, statement embedding, t/len, kept/max(t,1),
    /// min(len/50, 1)]`.
    pub fn features(
        &self,
        query: &[f32],
        statement: &[f32],
        t: usize,
        kept: usize,
        len: usize,
    ) -> Result<Vec<f64>, CoreError> {
        if query.len() != self.dim {
            return Err(CoreError::DimMismatch { expected: self.dim, got: query.len() });
        }
        if statement.len() != self.dim {
            return Err(CoreError::DimMismatch { expected: self.dim, got: statement.len() });
        }
        let mut feat = Vec::with_capacity(self.feat_dim());
        feat.extend(query.iter().map(|&x| x as f64));
        feat.extend(statement.iter().map(|&x| x as f64));
        feat.push(t as f64 / len.max(1) as f64);
        feat.push(kept as f64 / t.max(1) as f64);
        let size = len as f64 / 50.0;
        feat.push(if size < 1.0 { size } else { 1.0 });
        Ok(feat)
    }

    pub fn logits(&self, feat: &[f64]) -> [f64; N_ALIGN_ACTIONS] {
        let f = self.feat_dim();
        debug_assert_eq!(feat.len(), f);
        let mut out = [0.0; N_ALIGN_ACTIONS];
        for (a, slot) in out.iter_mut().enumerate() {
            let row = &self.w[a * f..(a + 1) * f];
            let mut acc = self.b[a];
            for (wi, xi) in row.iter().zip(feat) {
                acc += wi * xi;
            }
            *slot = acc;
        }
        out
    }

    pub fn value(&self, feat: &[f64]) -> f64 {
        let mut acc = self.vb;
        for (wi, xi) in self.vw.iter().zip(feat) {
            acc += wi * xi;
        }
        acc
    }

    /// Run one pass over the draft.
    ///
    /// `statements[i]` is the embedding of draft statement `i`, in draft
    /// order. Greedy decoding takes the argmax action (ties to the lowest
    /// index); otherwise actions are sampled from the softmax.
    pub fn align<R: Rng + ?Sized>(
        &self,
        query: &[f32],
        statements: &[&[f32]],
        greedy: bool,
        rng: &mut R,
    ) -> Result<AlignOutcome, CoreError> {
        let len = statements.len();
        let mut out = AlignOutcome::default();
        for (t, stmt) in statements.iter().enumerate() {
            let feat = self.features(query, stmt, t, out.kept.len(), len)?;
            let logits = self.logits(&feat);
            let action = if greedy {
                argmax_first(&logits)
            } else {
                sample_categorical(&softmax(&logits), rng)
            };
            let logp = log_softmax(&logits)[action];
            let value = self.value(&feat);
            out.steps.push(AlignStep { features: feat, action, logp, value });
            match AlignAction::from_index(action).expect("action index in range") {
                AlignAction::Keep => out.kept.push(t),
                AlignAction::Drop => {}
                AlignAction::Stop => break,
            }
        }
        Ok(out)
    }
}
