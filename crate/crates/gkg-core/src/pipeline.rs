//! End-to-end orchestration: route a query to a retrieval strategy, verbalize
//! the retrieved evidence into an ordered draft, align the draft into kept
//! knowledge, fold that knowledge into the prediction context, and score the
//! candidate pool.
//!
//! The coupling that makes alignment matter: the prediction context is the
//! embedding of the query text concatenated with the kept statements, so
//! editing the draft changes the context and with it the prediction
//! distribution. The no-retrieval baseline distribution uses the bare query
//! embedding; when nothing is kept the two contexts coincide and the measured
//! information gain is exactly zero.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;

use crate::align::AlignPolicy;
use crate::clock::{Clock, NullClock};
use crate::embed::{cosine, TextEncoder, VectorIndex};
use crate::experts::{run_expert, Expert, Indexes, Retrieved, RetrievalBudget};
use crate::kg::KnowledgeGraph;
use crate::prompts;
use crate::rec::{mine_hard_negatives, predict_greedy, Scorer};
use crate::reward::{kl_divergence, rec_reward, total_reward, CostModel};
use crate::train::{
    argmax_first, log_softmax, sample_categorical, softmax, PreferenceData, RouterOverride,
    RouterPolicy, TrainConfig, Trajectory, N_EXPERTS,
};
use crate::{CoreError, TextGenerator};

/// One prediction task: a user's recent history, the query it induces, and a
/// candidate pool containing the held-out target.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    /// Position of the source user/sequence in its dataset.
    pub user: usize,
    /// Recent interaction texts, oldest first.
    pub history: Vec<String>,
    /// Query text retrieval works from (the joined history).
    pub query: String,
    /// Query embedding; must equal `encode(query)` under the pipeline's
    /// encoder so the no-retrieval baseline is consistent.
    pub zq: Vec<f32>,
    /// Candidate embeddings, pool order.
    pub pool: Vec<Vec<f32>>,
    /// Candidate display texts, pool order.
    pub pool_texts: Vec<String>,
    /// Pool position of the held-out item.
    pub target: usize,
}

impl Instance {
    pub fn validate(&self, dim: usize) -> Result<(), CoreError> {
        if self.zq.len() != dim {
            return Err(CoreError::DimMismatch { expected: dim, got: self.zq.len() });
        }
        if self.pool.len() < 2 {
            return Err(CoreError::BadParam { name: "pool", why: "needs at least 2 candidates" });
        }
        if self.pool.len() != self.pool_texts.len() {
            return Err(CoreError::DimMismatch { expected: self.pool.len(), got: self.pool_texts.len() });
        }
        if self.target >= self.pool.len() {
            return Err(CoreError::BadParam { name: "target", why: "outside candidate pool" });
        }
        for row in &self.pool {
            if row.len() != dim {
                return Err(CoreError::DimMismatch { expected: dim, got: row.len() });
            }
        }
        Ok(())
    }
}

/// Build an instance from raw texts, embedding the query and pool with the
/// given encoder. The query is the history joined with newlines.
pub fn instance_from_texts<E: TextEncoder + ?Sized>(
    encoder: &E,
    user: usize,
    history: &[String],
    pool_texts: &[String],
    target: usize,
) -> Result<Instance, CoreError> {
    if pool_texts.len() < 2 {
        return Err(CoreError::BadParam { name: "pool", why: "needs at least 2 candidates" });
    }
    if target >= pool_texts.len() {
        return Err(CoreError::BadParam { name: "target", why: "outside candidate pool" });
    }
    let query = history.join("\n");
    let zq = encoder.encode(&query);
    let pool: Vec<Vec<f32>> = pool_texts.iter().map(|t| encoder.encode(t)).collect();
    Ok(Instance {
        user,
        history: history.to_vec(),
        query,
        zq,
        pool,
        pool_texts: pool_texts.to_vec(),
        target,
    })
}

/// Header statement naming the retrieval's anchor entities, in seed order.
pub fn key_entities_header(names: &[&str]) -> String {
    format!("Key entities: {}", names.join(", "))
}

/// Verbalize a retrieval into an ordered statement draft.
///
/// - No-retrieval: empty draft.
/// - Flat triple ranking: one statement per triple in ranked order, no header.
/// - Neighborhood expansion: a key-entity header, then one statement per
///   triple ordered by distance from the nearest seed (ties on ascending
///   triple index).
/// - Walk-and-forest: a key-entity header, then one statement per forest edge
///   ordered by ascending edge cost `1 - cos(query, relation)` (ties on
///   ascending triple index).
pub fn draft_statements(
    kg: &KnowledgeGraph,
    retrieved: &Retrieved,
    query: &[f32],
    relation_index: &VectorIndex,
) -> Result<Vec<String>, CoreError> {
    let stmt = |tidx: usize| -> String {
        let t = kg.triple(tidx);
        prompts::statement(kg.entity_text(t.head), kg.relation_text(t.rel), kg.entity_text(t.tail))
    };
    match retrieved.expert {
        Expert::Direct => Ok(Vec::new()),
        Expert::TripleRank => Ok(retrieved.triples.iter().map(|&t| stmt(t)).collect()),
        Expert::HopExpand | Expert::PprForest => {
            let names: Vec<&str> =
                retrieved.seeds.iter().map(|&e| kg.entity_text(e)).collect();
            let mut out = Vec::with_capacity(retrieved.triples.len() + 1);
            out.push(key_entities_header(&names));
            let ordered = match retrieved.expert {
                Expert::HopExpand => order_by_seed_proximity(kg, retrieved),
                Expert::PprForest => order_by_edge_cost(kg, retrieved, query, relation_index)?,
                _ => unreachable!(),
            };
            out.extend(ordered.into_iter().map(stmt));
            Ok(out)
        }
    }
}

/// Order retrieved triples by hop distance of their nearest endpoint from the
/// seed set, measured over the retrieved edges only; ties break on ascending
/// triple index.
fn order_by_seed_proximity(kg: &KnowledgeGraph, retrieved: &Retrieved) -> Vec<usize> {
    // Adjacency restricted to the retrieved triples.
    let mut adj: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &tidx in &retrieved.triples {
        let t = kg.triple(tidx);
        adj.entry(t.head).or_default().push(t.tail);
        adj.entry(t.tail).or_default().push(t.head);
    }
    let mut dist: BTreeMap<usize, usize> = BTreeMap::new();
    let mut queue = VecDeque::new();
    for &s in &retrieved.seeds {
        dist.insert(s, 0);
        queue.push_back(s);
    }
    while let Some(u) = queue.pop_front() {
        let du = dist[&u];
        if let Some(nbrs) = adj.get(&u) {
            for &v in nbrs {
                if !dist.contains_key(&v) {
                    dist.insert(v, du + 1);
                    queue.push_back(v);
                }
            }
        }
    }
    let far = usize::MAX / 2;
    let mut keyed: Vec<(usize, usize)> = retrieved
        .triples
        .iter()
        .map(|&tidx| {
            let t = kg.triple(tidx);
            let dh = dist.get(&t.head).copied().unwrap_or(far);
            let dt = dist.get(&t.tail).copied().unwrap_or(far);
            (dh.min(dt), tidx)
        })
        .collect();
    keyed.sort_unstable();
    keyed.into_iter().map(|(_, t)| t).collect()
}

/// Order retrieved triples by the forest's edge cost, ascending; ties break
/// on ascending triple index.
fn order_by_edge_cost(
    kg: &KnowledgeGraph,
    retrieved: &Retrieved,
    query: &[f32],
    relation_index: &VectorIndex,
) -> Result<Vec<usize>, CoreError> {
    if query.len() != relation_index.dim() {
        return Err(CoreError::DimMismatch { expected: relation_index.dim(), got: query.len() });
    }
    let mut rel_cost: BTreeMap<usize, f64> = BTreeMap::new();
    let mut keyed: Vec<(f64, usize)> = Vec::with_capacity(retrieved.triples.len());
    for &tidx in &retrieved.triples {
        let rel = kg.triple(tidx).rel;
        let cost = *rel_cost
            .entry(rel)
            .or_insert_with(|| 1.0 - cosine(query, relation_index.row(rel)));
        keyed.push((cost, tidx));
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(keyed.into_iter().map(|(_, t)| t).collect())
}

/// Knowledge text for the refinement-capable strategies, produced by a
/// generation backend; any backend failure (or a strategy without a
/// refinement template) falls back to the plain statement concatenation.
pub fn refine_knowledge<G: TextGenerator + ?Sized>(
    backend: &G,
    expert: Expert,
    statements: &[String],
    temperature: f64,
) -> String {
    let plain = prompts::knowledge_text(statements);
    if statements.is_empty() {
        return plain;
    }
    match prompts::render_refine(expert.index(), &plain) {
        Some(prompt) => backend.generate(&prompt, temperature).unwrap_or(plain),
        None => plain,
    }
}

/// Greedy inference result with timing.
#[derive(Debug, Clone, PartialEq)]
pub struct InferOutcome {
    pub expert: Expert,
    /// Prediction distribution over the candidate pool.
    pub probs: Vec<f64>,
    pub predicted: usize,
    pub confidence: f64,
    /// Draft length before alignment.
    pub draft_len: usize,
    /// Kept draft positions, ascending.
    pub kept: Vec<usize>,
    /// Kept statement texts, draft order.
    pub kept_statements: Vec<String>,
    /// Time spent inside the retrieval strategy.
    pub retrieval_ns: u64,
    /// Time from query receipt to prediction.
    pub total_ns: u64,
}

/// Number of structural summary scalars appended to the query embedding to
/// form the routing state.
pub const ROUTER_STATE_EXTRAS: usize = 6;

/// The wired retrieval-and-recommendation engine over one graph.
#[derive(Debug, Clone)]
pub struct Pipeline<'a, E: TextEncoder> {
    pub kg: &'a KnowledgeGraph,
    pub indexes: &'a Indexes,
    pub encoder: &'a E,
    pub budget: RetrievalBudget,
    pub costs: CostModel,
}

impl<'a, E: TextEncoder> Pipeline<'a, E> {
    pub fn new(kg: &'a KnowledgeGraph, indexes: &'a Indexes, encoder: &'a E) -> Self {
        Self { kg, indexes, encoder, budget: RetrievalBudget::default(), costs: CostModel::default() }
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        self.indexes.validate(self.kg)?;
        self.budget.validate()?;
        self.costs.validate()?;
        if self.encoder.dim() != self.indexes.dim() {
            return Err(CoreError::DimMismatch {
                expected: self.indexes.dim(),
                got: self.encoder.dim(),
            });
        }
        Ok(())
    }

    /// Retrieve, draft, and align for a fixed strategy; shared by the rollout
    /// and inference paths.
    /// Run one retrieval strategy for a query embedding and verbalize the
    /// result into draft statements.
    pub fn retrieve_and_draft<C: Clock + ?Sized>(
        &self,
        expert: Expert,
        zq: &[f32],
        clock: &C,
    ) -> Result<(Retrieved, Vec<String>), CoreError> {
        let retrieved = run_expert(expert, self.kg, self.indexes, zq, &self.budget, clock)?;
        let statements = draft_statements(self.kg, &retrieved, zq, &self.indexes.relation)?;
        Ok((retrieved, statements))
    }

    /// Prediction context: the query embedding when nothing was kept,
    /// otherwise the embedding of the query text joined with the kept
    /// statements.
    fn context_embedding(&self, instance: &Instance, kept: &[String]) -> Vec<f32> {
        if kept.is_empty() {
            instance.zq.clone()
        } else {
            let ctx_text = format!("{}\n{}", instance.query, kept.join("\n"));
            self.encoder.encode(&ctx_text)
        }
    }

    /// One training episode with sampled (or greedy) decisions. The
    /// prediction itself is always greedy; exploration lives in the routing
    /// and alignment choices.
    pub fn rollout<R: Rng + ?Sized>(
        &self,
        router: &RouterPolicy,
        align: &AlignPolicy,
        scorer: &Scorer,
        instance: &Instance,
        cfg: &TrainConfig,
        greedy: bool,
        rng: &mut R,
    ) -> Result<Trajectory, CoreError> {
        instance.validate(self.encoder.dim())?;
        let feat = router.features(&instance.zq)?;
        let logits = router.logits(&feat);
        let action = match cfg.router_override {
            None => {
                if greedy {
                    argmax_first(&logits)
                } else {
                    sample_categorical(&softmax(&logits), rng)
                }
            }
            Some(RouterOverride::Random) => rng.gen_range(0..N_EXPERTS),
            Some(RouterOverride::Fixed(e)) => e,
        };
        let expert = Expert::from_index(action)
            .ok_or(CoreError::BadParam { name: "router_override", why: "index out of range" })?;
        let logp = log_softmax(&logits)[action];
        let value = router.value(&feat);

        let (_, statements) = self.retrieve_and_draft(expert, &instance.zq, &NullClock)?;
        let stmt_emb: Vec<Vec<f32>> = statements.iter().map(|s| self.encoder.encode(s)).collect();
        let stmt_refs: Vec<&[f32]> = stmt_emb.iter().map(|v| v.as_slice()).collect();
        let outcome = align.align(&instance.zq, &stmt_refs, greedy, rng)?;
        let kept: Vec<String> = outcome.kept.iter().map(|&i| statements[i].clone()).collect();

        let z_ctx = self.context_embedding(instance, &kept);
        let pool_refs: Vec<&[f32]> = instance.pool.iter().map(|v| v.as_slice()).collect();
        let probs = scorer.probs(&z_ctx, &pool_refs)?;
        let (predicted, _) = predict_greedy(&probs);
        let r_rec = rec_reward(&probs, predicted, instance.target);
        // Nothing kept means the context equals the bare query, so the gain
        // is identically zero; this also covers the no-retrieval strategy.
        let delta_i = if kept.is_empty() {
            0.0
        } else {
            let base = scorer.probs(&instance.zq, &pool_refs)?;
            kl_divergence(&probs, &base, cfg.prob_floor)?
        };
        let reward = total_reward(r_rec, delta_i, self.costs.cost(expert), cfg.alpha, cfg.eta);
        let negatives = mine_hard_negatives(&probs, instance.target, cfg.n_hard);

        Ok(Trajectory {
            router_features: feat,
            router_action: action,
            router_logp: logp,
            router_value: value,
            align_steps: outcome.steps,
            reward,
            pref: PreferenceData {
                ctx: z_ctx,
                pool: instance.pool.clone(),
                target: instance.target,
                negatives,
            },
            advantages: Vec::new(),
            returns: Vec::new(),
        })
    }

    /// Greedy end-to-end inference with timing.
    pub fn infer<C: Clock + ?Sized>(
        &self,
        router: &RouterPolicy,
        align: &AlignPolicy,
        scorer: &Scorer,
        instance: &Instance,
        clock: &C,
    ) -> Result<InferOutcome, CoreError> {
        instance.validate(self.encoder.dim())?;
        let t0 = clock.now_ns();
        let feat = router.features(&instance.zq)?;
        let action = argmax_first(&router.logits(&feat));
        let expert = Expert::from_index(action).expect("argmax over strategy logits");
        let (retrieved, statements) = self.retrieve_and_draft(expert, &instance.zq, clock)?;
        let stmt_emb: Vec<Vec<f32>> = statements.iter().map(|s| self.encoder.encode(s)).collect();
        let stmt_refs: Vec<&[f32]> = stmt_emb.iter().map(|v| v.as_slice()).collect();
        // Greedy decoding draws nothing from the generator below.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let outcome = align.align(&instance.zq, &stmt_refs, true, &mut rng)?;
        let kept_statements: Vec<String> =
            outcome.kept.iter().map(|&i| statements[i].clone()).collect();
        let z_ctx = self.context_embedding(instance, &kept_statements);
        let pool_refs: Vec<&[f32]> = instance.pool.iter().map(|v| v.as_slice()).collect();
        let probs = scorer.probs(&z_ctx, &pool_refs)?;
        let (predicted, confidence) = predict_greedy(&probs);
        let total_ns = clock.now_ns().saturating_sub(t0);
        Ok(InferOutcome {
            expert,
            probs,
            predicted,
            confidence,
            draft_len: statements.len(),
            kept: outcome.kept,
            kept_statements,
            retrieval_ns: retrieved.elapsed_ns,
            total_ns,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{HashEncoder, IndexKind};
    use crate::kg::Triple;
    use crate::train::RouterDecision;
    use alloc::string::ToString;
    use alloc::vec;
    use core::cell::Cell;
    use rand_chacha::ChaCha8Rng;

    fn texts(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    fn build_indexes(kg: &KnowledgeGraph, enc: &HashEncoder) -> Indexes {
        let ent: Vec<Vec<f32>> = kg.entity_texts().iter().map(|t| enc.encode(t)).collect();
        let rel: Vec<Vec<f32>> = kg.relation_texts().iter().map(|t| enc.encode(t)).collect();
        let tri: Vec<Vec<f32>> =
            (0..kg.n_triples()).map(|i| enc.encode(&kg.triple_text(i))).collect();
        Indexes {
            entity: VectorIndex::build(IndexKind::Entity, enc.dim(), ent).unwrap(),
            relation: VectorIndex::build(IndexKind::Relation, enc.dim(), rel).unwrap(),
            triple: VectorIndex::build(IndexKind::Triple, enc.dim(), tri).unwrap(),
        }
    }

    /// Clock returning 1, 2, 3, ... nanoseconds on successive calls.
    struct TickClock(Cell<u64>);
    impl Clock for TickClock {
        fn now_ns(&self) -> u64 {
            let t = self.0.get() + 1;
            self.0.set(t);
            t
        }
    }

    fn simple_instance(enc: &HashEncoder, pool_n: usize, target: usize) -> Instance {
        let history = texts("watched movie ", 3);
        let pool = texts("candidate film ", pool_n);
        instance_from_texts(enc, 0, &history, &pool, target).unwrap()
    }

    #[test]
    fn instances_embed_query_and_pool_consistently() {
        let enc = HashEncoder::new(16, 3).unwrap();
        let inst = simple_instance(&enc, 4, 2);
        assert_eq!(inst.query, "watched movie 0\nwatched movie 1\nwatched movie 2");
        assert_eq!(inst.zq, enc.encode(&inst.query));
        assert_eq!(inst.pool.len(), 4);
        assert_eq!(inst.pool[1], enc.encode("candidate film 1"));
        inst.validate(16).unwrap();
        assert!(inst.validate(8).is_err());
        let bad = instance_from_texts(&enc, 0, &inst.history, &inst.pool_texts, 9);
        assert!(bad.is_err());
        let tiny = instance_from_texts(&enc, 0, &inst.history, &texts("x", 1), 0);
        assert!(tiny.is_err());
    }

    #[test]
    fn direct_draft_is_empty_and_flat_ranker_has_no_header() {
        let (kg, _) = KnowledgeGraph::new(
            texts("node", 4),
            vec!["linked".to_string()],
            vec![Triple::new(0, 0, 1), Triple::new(1, 0, 2), Triple::new(2, 0, 3)],
        )
        .unwrap();
        let enc = HashEncoder::new(32, 5).unwrap();
        let idx = build_indexes(&kg, &enc);
        let q = enc.encode("node1 linked node2");
        let direct =
            run_expert(Expert::Direct, &kg, &idx, &q, &RetrievalBudget::default(), &NullClock)
                .unwrap();
        assert!(draft_statements(&kg, &direct, &q, &idx.relation).unwrap().is_empty());
        let ranked =
            run_expert(Expert::TripleRank, &kg, &idx, &q, &RetrievalBudget::default(), &NullClock)
                .unwrap();
        let draft = draft_statements(&kg, &ranked, &q, &idx.relation).unwrap();
        assert_eq!(draft.len(), ranked.triples.len());
        for (s, &t) in draft.iter().zip(&ranked.triples) {
            let tr = kg.triple(t);
            assert_eq!(
                s,
                &prompts::statement(
                    kg.entity_text(tr.head),
                    kg.relation_text(tr.rel),
                    kg.entity_text(tr.tail)
                )
            );
            assert!(!s.starts_with("Key entities:"));
        }
    }

    #[test]
    fn neighborhood_draft_leads_with_header_and_orders_by_proximity() {
        // Path seed - mid - far; the triple nearer the seed is deliberately
        // given the larger index so proximity, not index, must drive order.
        let (kg, _) = KnowledgeGraph::new(
            vec!["anchor hub".to_string(), "mid point".to_string(), "far point".to_string()],
            vec!["linked".to_string()],
            vec![Triple::new(1, 0, 2), Triple::new(0, 0, 1)],
        )
        .unwrap();
        let enc = HashEncoder::new(64, 9).unwrap();
        let idx = build_indexes(&kg, &enc);
        let q = enc.encode("anchor hub");
        let budget = RetrievalBudget { seed_count: 1, hop_k: 2, ..RetrievalBudget::default() };
        let got = run_expert(Expert::HopExpand, &kg, &idx, &q, &budget, &NullClock).unwrap();
        assert_eq!(got.seeds, vec![0]);
        assert_eq!(got.triples, vec![0, 1]);
        let draft = draft_statements(&kg, &got, &q, &idx.relation).unwrap();
        assert_eq!(draft.len(), 3);
        assert_eq!(draft[0], "Key entities: anchor hub");
        // Triple 1 (seed-adjacent) precedes triple 0 (one hop out).
        assert_eq!(draft[1], "anchor hub linked mid point");
        assert_eq!(draft[2], "mid point linked far point");
    }

    #[test]
    fn proximity_ties_fall_back_to_triple_index() {
        // A 4-edge star around the seed: all edges touch the seed, so the
        // draft keeps index order. Counts: 4 edges -> 5 statements.
        let mut etexts = vec!["anchor hub".to_string()];
        etexts.extend(texts("leaf number ", 4));
        let triples: Vec<Triple> = (0..4).map(|i| Triple::new(0, 0, i + 1)).collect();
        let (kg, _) = KnowledgeGraph::new(etexts, vec!["linked".to_string()], triples).unwrap();
        let enc = HashEncoder::new(64, 9).unwrap();
        let idx = build_indexes(&kg, &enc);
        let q = enc.encode("anchor hub");
        let budget = RetrievalBudget { seed_count: 1, hop_k: 1, ..RetrievalBudget::default() };
        let got = run_expert(Expert::HopExpand, &kg, &idx, &q, &budget, &NullClock).unwrap();
        let draft = draft_statements(&kg, &got, &q, &idx.relation).unwrap();
        assert_eq!(draft.len(), 5);
        for (i, s) in draft.iter().skip(1).enumerate() {
            assert_eq!(s, &format!("anchor hub linked leaf number {i}"));
        }
    }

    #[test]
    fn forest_draft_orders_by_relation_cost_not_index() {
        // Triangle a-b-c; the query matches one relation's text exactly, so
        // its edges are cheapest. The cheap edge has the larger triple index.
        let (kg, _) = KnowledgeGraph::new(
            vec!["alpha".to_string(), "beta".to_string(), "gamma".to_string()],
            vec!["unrelated obscure".to_string(), "matched phrase".to_string()],
            vec![Triple::new(0, 0, 1), Triple::new(1, 1, 2)],
        )
        .unwrap();
        let enc = HashEncoder::new(64, 13).unwrap();
        let idx = build_indexes(&kg, &enc);
        let q = enc.encode("matched phrase");
        let budget = RetrievalBudget { seed_count: 1, ..RetrievalBudget::default() };
        let got = run_expert(Expert::PprForest, &kg, &idx, &q, &budget, &NullClock).unwrap();
        assert_eq!(got.triples, vec![0, 1], "both edges span the forest");
        let draft = draft_statements(&kg, &got, &q, &idx.relation).unwrap();
        assert_eq!(draft.len(), 3);
        assert!(draft[0].starts_with("Key entities: "));
        // The matched-relation edge (triple 1) is cheaper and comes first;
        // "matched" reads as a verb, "unrelated" bridges through "has".
        assert_eq!(draft[1], "beta matched phrase gamma");
        assert_eq!(draft[2], "alpha has unrelated obscure beta");
    }

    #[test]
    fn structural_draft_on_isolated_seed_is_header_only() {
        let (kg, _) = KnowledgeGraph::new(
            vec!["lonely node".to_string(), "other".to_string(), "third".to_string()],
            vec!["linked".to_string()],
            vec![Triple::new(1, 0, 2)],
        )
        .unwrap();
        let enc = HashEncoder::new(64, 17).unwrap();
        let idx = build_indexes(&kg, &enc);
        let q = enc.encode("lonely node");
        let budget = RetrievalBudget {
            seed_count: 1,
            ppr_node_budget: 1,
            ..RetrievalBudget::default()
        };
        let got = run_expert(Expert::PprForest, &kg, &idx, &q, &budget, &NullClock).unwrap();
        assert_eq!(got.seeds, vec![0]);
        assert!(got.triples.is_empty());
        let draft = draft_statements(&kg, &got, &q, &idx.relation).unwrap();
        assert_eq!(draft, vec!["Key entities: lonely node".to_string()]);
    }

    fn small_world(enc: &HashEncoder) -> (KnowledgeGraph, Indexes) {
        let mut etexts = vec!["anchor hub".to_string()];
        etexts.extend(texts("leaf number ", 5));
        let triples: Vec<Triple> = (0..5).map(|i| Triple::new(0, 0, i + 1)).collect();
        let (kg, _) = KnowledgeGraph::new(etexts, vec!["linked".to_string()], triples).unwrap();
        let idx = build_indexes(&kg, enc);
        (kg, idx)
    }

    #[test]
    fn greedy_rollout_from_zero_init_is_the_free_strategy() {
        let enc = HashEncoder::new(32, 21).unwrap();
        let (kg, idx) = small_world(&enc);
        let pipe = Pipeline::new(&kg, &idx, &enc);
        pipe.validate().unwrap();
        let inst = simple_instance(&enc, 4, 0);
        let router = RouterPolicy::new(32);
        let align = AlignPolicy::new(32);
        let scorer = Scorer::new(32);
        let cfg = TrainConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let traj = pipe.rollout(&router, &align, &scorer, &inst, &cfg, true, &mut rng).unwrap();
        // Zero logits, greedy: the first strategy (no retrieval) wins.
        assert_eq!(traj.router_action, 0);
        assert!(traj.align_steps.is_empty(), "no draft to align");
        assert_eq!(traj.reward.delta_i, 0.0, "no-retrieval gain must be exactly zero");
        assert_eq!(traj.reward.cost, 0.0);
        // Uniform scorer, greedy tie to index 0 == target: reward is 1/4.
        assert!((traj.reward.r_rec - 0.25).abs() < 1e-12);
        assert_eq!(traj.reward.r_total, traj.reward.r_rec);
        assert_eq!(traj.pref.negatives, vec![1, 2, 3]);
        assert!((core::f64::consts::LN_2 * 2.0 + traj.router_logp).abs() < 1e-12); // ln(1/4)
    }

    #[test]
    fn fixed_override_routes_every_rollout_to_that_strategy() {
        let enc = HashEncoder::new(32, 23).unwrap();
        let (kg, idx) = small_world(&enc);
        let pipe = Pipeline::new(&kg, &idx, &enc);
        let inst = simple_instance(&enc, 4, 1);
        let router = RouterPolicy::new(32);
        let align = AlignPolicy::new(32);
        let scorer = Scorer::new(32);
        let cfg = TrainConfig {
            router_override: Some(RouterOverride::Fixed(3)),
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let traj =
                pipe.rollout(&router, &align, &scorer, &inst, &cfg, false, &mut rng).unwrap();
            assert_eq!(traj.router_action, 3);
            assert_eq!(traj.reward.cost, 4.0);
        }
    }

    #[test]
    fn random_override_reaches_every_strategy() {
        let enc = HashEncoder::new(32, 25).unwrap();
        let (kg, idx) = small_world(&enc);
        let pipe = Pipeline::new(&kg, &idx, &enc);
        let inst = simple_instance(&enc, 4, 1);
        let router = RouterPolicy::new(32);
        let align = AlignPolicy::new(32);
        let scorer = Scorer::new(32);
        let cfg = TrainConfig {
            router_override: Some(RouterOverride::Random),
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut seen = [false; 4];
        for _ in 0..100 {
            let traj =
                pipe.rollout(&router, &align, &scorer, &inst, &cfg, false, &mut rng).unwrap();
            seen[traj.router_action] = true;
        }
        assert_eq!(seen, [true; 4]);
    }

    #[test]
    fn kept_knowledge_changes_the_context_and_yields_positive_gain() {
        let enc = HashEncoder::new(32, 27).unwrap();
        let (kg, idx) = small_world(&enc);
        let pipe = Pipeline::new(&kg, &idx, &enc);
        let inst = simple_instance(&enc, 6, 2);
        let router = RouterPolicy::new(32);
        let align = AlignPolicy::new(32); // zero-init greedy keeps everything
        let mut scorer = Scorer::new(32);
        // A non-degenerate scorer so different contexts produce different
        // distributions: identity interaction matrix.
        for i in 0..32 {
            scorer.w[i * 32 + i] = 1.0;
        }
        let cfg = TrainConfig {
            router_override: Some(RouterOverride::Fixed(2)),
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let traj = pipe.rollout(&router, &align, &scorer, &inst, &cfg, true, &mut rng).unwrap();
        assert!(!traj.align_steps.is_empty(), "the neighborhood draft is non-empty");
        assert!(traj.reward.delta_i > 0.0, "kept knowledge must move the distribution");
        assert!(traj.reward.delta_i.is_finite());
        // Identity: r_total = r_rec + alpha * (delta_i - eta * cost).
        let want = traj.reward.r_rec + 0.2 * (traj.reward.delta_i - 0.005 * traj.reward.cost);
        assert!((traj.reward.r_total - want).abs() <= 1e-12);
    }

    #[test]
    fn rollout_records_replayable_log_probabilities() {
        let enc = HashEncoder::new(32, 29).unwrap();
        let (kg, idx) = small_world(&enc);
        let pipe = Pipeline::new(&kg, &idx, &enc);
        let inst = simple_instance(&enc, 4, 1);
        let mut router = RouterPolicy::new(32);
        router.b = vec![0.1, 0.4, -0.2, 0.0];
        let align = AlignPolicy::new(32);
        let scorer = Scorer::new(32);
        let cfg = TrainConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let traj = pipe.rollout(&router, &align, &scorer, &inst, &cfg, false, &mut rng).unwrap();
        let logits = router.logits(&traj.router_features);
        assert!((traj.router_logp - log_softmax(&logits)[traj.router_action]).abs() < 1e-12);
        let d: RouterDecision = router.select(&traj.router_features, true, &mut rng);
        assert_eq!(d.expert.index(), argmax_first(&logits));
        for step in &traj.align_steps {
            let l = align.logits(&step.features);
            assert!((step.logp - log_softmax(&l)[step.action]).abs() < 1e-12);
        }
    }

    #[test]
    fn inference_is_greedy_deterministic_and_timed() {
        let enc = HashEncoder::new(32, 31).unwrap();
        let (kg, idx) = small_world(&enc);
        let pipe = Pipeline::new(&kg, &idx, &enc);
        let inst = simple_instance(&enc, 5, 3);
        let mut router = RouterPolicy::new(32);
        router.b = vec![0.0, 0.0, 1.0, 0.0]; // force the neighborhood strategy
        let align = AlignPolicy::new(32);
        let scorer = Scorer::new(32);
        let clock = TickClock(Cell::new(0));
        let a = pipe.infer(&router, &align, &scorer, &inst, &clock).unwrap();
        let b = pipe.infer(&router, &align, &scorer, &inst, &clock).unwrap();
        assert_eq!(a.expert, Expert::HopExpand);
        assert_eq!(a.predicted, b.predicted);
        assert_eq!(a.probs, b.probs);
        assert_eq!(a.predicted, argmax_first(&a.probs));
        assert!((a.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(a.total_ns >= a.retrieval_ns, "retrieval time is part of total time");
        assert!(a.total_ns > 0);
        assert_eq!(a.kept.len(), a.kept_statements.len());
        assert_eq!(a.kept.len(), a.draft_len, "zero-init alignment keeps the whole draft");
    }

    struct FixedGen(&'static str);
    impl TextGenerator for FixedGen {
        fn generate(&self, _prompt: &str, _temperature: f64) -> Result<String, CoreError> {
            Ok(self.0.to_string())
        }
    }

    struct FailingGen;
    impl TextGenerator for FailingGen {
        fn generate(&self, _prompt: &str, _temperature: f64) -> Result<String, CoreError> {
            Err(CoreError::Generator("backend offline".to_string()))
        }
    }

    #[test]
    fn knowledge_refinement_falls_back_to_plain_concatenation() {
        let stmts = vec!["a linked b".to_string(), "b linked c".to_string()];
        let plain = "a linked b\nb linked c";
        assert_eq!(refine_knowledge(&FixedGen("tidy summary"), Expert::TripleRank, &stmts, 0.8), "tidy summary");
        assert_eq!(refine_knowledge(&FixedGen("tidy summary"), Expert::PprForest, &stmts, 0.8), "tidy summary");
        assert_eq!(refine_knowledge(&FailingGen, Expert::HopExpand, &stmts, 0.8), plain);
        // The no-retrieval strategy has no refinement template.
        assert_eq!(refine_knowledge(&FixedGen("ignored"), Expert::Direct, &stmts, 0.8), plain);
        assert_eq!(refine_knowledge(&FixedGen("ignored"), Expert::TripleRank, &[], 0.8), "");
    }
}
