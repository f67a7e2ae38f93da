//! Leave-last-out evaluation: each qualifying user sequence becomes one
//! prediction task whose target is the final item, whose context is the ten
//! preceding items, and whose candidate pool hides the target among uniform
//! distractors at a seeded position. Everything at evaluation time is greedy.

use alloc::vec::Vec;

use rand::Rng;

use crate::align::AlignPolicy;
use crate::clock::Clock;
use crate::embed::TextEncoder;
use crate::kg::{ItemId, KnowledgeGraph};
use crate::pipeline::{instance_from_texts, Instance, Pipeline};
use crate::rec::{rank_of, Scorer};
use crate::rng::stream_rng;
use crate::train::{RouterPolicy, N_EXPERTS};
use crate::CoreError;

/// Context length per prediction task.
pub const HISTORY_LEN: usize = 10;
/// Candidate pool size (target plus distractors).
pub const POOL_SIZE: usize = 20;
/// Minimum interactions a sequence needs to qualify (context plus target).
pub const MIN_SEQUENCE: usize = HISTORY_LEN + 1;

/// Which prediction tasks an evaluation set keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    /// Every qualifying user.
    Standard,
    /// Only tasks whose target item sits in the bottom tenth of the catalog
    /// by training interaction count.
    ColdStart,
}

/// An evaluation set plus bookkeeping about its construction.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub instances: Vec<Instance>,
    /// Sequences skipped for having fewer than [`MIN_SEQUENCE`] interactions.
    pub skipped_short: usize,
    /// Qualifying tasks dropped because the target item was not cold
    /// (always zero in standard mode).
    pub filtered_warm: usize,
}

/// Per-item interaction totals over a set of sequences, for the catalog of
/// `n_items` items.
pub fn item_interaction_counts(
    sequences: &[Vec<ItemId>],
    n_items: usize,
) -> Result<Vec<usize>, CoreError> {
    let mut counts = alloc::vec![0usize; n_items];
    for seq in sequences {
        for &item in seq {
            if item >= n_items {
                return Err(CoreError::BadParam {
                    name: "sequences",
                    why: "interaction references an item outside the catalog",
                });
            }
            counts[item] += 1;
        }
    }
    Ok(counts)
}

/// Membership mask for the cold tenth of the catalog: the `ceil(n/10)` items
/// with the fewest training interactions (count ascending, id ascending).
pub fn cold_item_mask(item_counts: &[usize]) -> Vec<bool> {
    let n = item_counts.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (item_counts[i], i));
    let mut mask = alloc::vec![false; n];
    for &i in order.iter().take(n.div_ceil(10)) {
        mask[i] = true;
    }
    mask
}

fn sample_pool<R: Rng>(
    target: ItemId,
    context: &[ItemId],
    n_items: usize,
    rng: &mut R,
) -> Result<(Vec<ItemId>, usize), CoreError> {
    let mut excluded: Vec<ItemId> = context.to_vec();
    excluded.push(target);
    excluded.sort_unstable();
    excluded.dedup();
    if n_items < excluded.len() + (POOL_SIZE - 1) {
        return Err(CoreError::BadParam {
            name: "n_items",
            why: "catalog too small for the distractor pool",
        });
    }
    let mut distractors: Vec<ItemId> = Vec::with_capacity(POOL_SIZE - 1);
    while distractors.len() < POOL_SIZE - 1 {
        let cand = rng.gen_range(0..n_items);
        if excluded.binary_search(&cand).is_ok() || distractors.contains(&cand) {
            continue;
        }
        distractors.push(cand);
    }
    let pos = rng.gen_range(0..POOL_SIZE);
    let mut pool = distractors;
    pool.insert(pos, target);
    Ok((pool, pos))
}

/// Build one prediction task from the tail of a sequence: the last item is
/// the target and the ten before it are the context.
fn tail_instance<E: TextEncoder + ?Sized>(
    kg: &KnowledgeGraph,
    encoder: &E,
    user: usize,
    seq: &[ItemId],
    end: usize,
    n_items: usize,
    seed: u64,
    stream: u64,
) -> Result<Instance, CoreError> {
    let target_item = seq[end];
    let context = &seq[end - HISTORY_LEN..end];
    let mut rng = stream_rng(seed, stream);
    let (pool_items, pos) = sample_pool(target_item, context, n_items, &mut rng)?;
    let history: Vec<_> = context.iter().map(|&i| kg.item_text(i)).collect();
    let pool_texts: Vec<_> = pool_items.iter().map(|&i| kg.item_text(i)).collect();
    instance_from_texts(encoder, user, &history, &pool_texts, pos)
}

/// Build the evaluation set: one instance per qualifying user, from the final
/// position of their sequence. `train_item_counts` (per-item training
/// interaction counts, indexed by item id over the whole catalog) is required
/// for cold-start mode and ignored otherwise.
pub fn build_eval_set<E: TextEncoder + ?Sized>(
    kg: &KnowledgeGraph,
    encoder: &E,
    sequences: &[Vec<ItemId>],
    n_items: usize,
    mode: EvalMode,
    train_item_counts: Option<&[usize]>,
    seed: u64,
) -> Result<EvalSet, CoreError> {
    let cold: Option<Vec<bool>> = match mode {
        EvalMode::Standard => None,
        EvalMode::ColdStart => {
            let counts = train_item_counts.ok_or(CoreError::BadParam {
                name: "train_item_counts",
                why: "required for cold-start mode",
            })?;
            if counts.len() != n_items {
                return Err(CoreError::DimMismatch { expected: n_items, got: counts.len() });
            }
            Some(cold_item_mask(counts))
        }
    };
    let mut set = EvalSet { instances: Vec::new(), skipped_short: 0, filtered_warm: 0 };
    for (u, seq) in sequences.iter().enumerate() {
        if seq.len() < MIN_SEQUENCE {
            set.skipped_short += 1;
            continue;
        }
        let target_item = *seq.last().expect("length checked above");
        if let Some(mask) = &cold {
            if !mask[target_item] {
                set.filtered_warm += 1;
                continue;
            }
        }
        let inst =
            tail_instance(kg, encoder, u, seq, seq.len() - 1, n_items, seed, u as u64)?;
        set.instances.push(inst);
    }
    Ok(set)
}

/// Build a training set by sliding the context window over every qualifying
/// position of every sequence (one instance per position with a full
/// ten-item context).
pub fn build_train_set<E: TextEncoder + ?Sized>(
    kg: &KnowledgeGraph,
    encoder: &E,
    sequences: &[Vec<ItemId>],
    n_items: usize,
    seed: u64,
) -> Result<Vec<Instance>, CoreError> {
    let mut out = Vec::new();
    for (u, seq) in sequences.iter().enumerate() {
        if seq.len() < MIN_SEQUENCE {
            continue;
        }
        for end in HISTORY_LEN..seq.len() {
            // One stream per (user, position) pair keeps pools independent.
            let stream = (u as u64) << 16 | end as u64;
            out.push(tail_instance(kg, encoder, u, seq, end, n_items, seed, stream)?);
        }
    }
    Ok(out)
}

/// Aggregate metrics over one evaluation run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub instances: usize,
    /// Fraction of instances whose greedy prediction is the target.
    pub accuracy: f64,
    pub recall_at_3: f64,
    pub recall_at_5: f64,
    /// Mean seconds spent inside the retrieval strategy per instance.
    pub mean_retrieval_seconds: f64,
    /// Mean seconds from query receipt to prediction per instance.
    pub mean_total_seconds: f64,
    /// Fraction of instances routed to each strategy; sums to one.
    pub expert_frac: [f64; N_EXPERTS],
    /// Mean retrieval cost under the pipeline's cost model.
    pub mean_cost: f64,
}

/// Run greedy inference over an instance set and aggregate metrics.
pub fn evaluate<E: TextEncoder, C: Clock + ?Sized>(
    pipe: &Pipeline<'_, E>,
    router: &RouterPolicy,
    align: &AlignPolicy,
    scorer: &Scorer,
    instances: &[Instance],
    clock: &C,
) -> Result<EvalReport, CoreError> {
    if instances.is_empty() {
        return Err(CoreError::Empty("evaluation set"));
    }
    let n = instances.len() as f64;
    let mut correct = 0usize;
    let mut hit3 = 0usize;
    let mut hit5 = 0usize;
    let mut retrieval_ns = 0.0f64;
    let mut total_ns = 0.0f64;
    let mut counts = [0usize; N_EXPERTS];
    let mut cost = 0.0f64;
    for inst in instances {
        let out = pipe.infer(router, align, scorer, inst, clock)?;
        if out.predicted == inst.target {
            correct += 1;
        }
        let rank = rank_of(&out.probs, inst.target);
        if rank < 3 {
            hit3 += 1;
        }
        if rank < 5 {
            hit5 += 1;
        }
        retrieval_ns += out.retrieval_ns as f64;
        total_ns += out.total_ns as f64;
        counts[out.expert.index()] += 1;
        cost += pipe.costs.cost(out.expert);
    }
    Ok(EvalReport {
        instances: instances.len(),
        accuracy: correct as f64 / n,
        recall_at_3: hit3 as f64 / n,
        recall_at_5: hit5 as f64 / n,
        mean_retrieval_seconds: retrieval_ns / n / 1e9,
        mean_total_seconds: total_ns / n / 1e9,
        expert_frac: counts.map(|c| c as f64 / n),
        mean_cost: cost / n,
    })
}
