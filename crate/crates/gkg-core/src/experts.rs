//! Retrieval experts: four strategies trading evidence breadth for cost.
//!
//! * [`Expert::Direct`] — no retrieval; the model answers from the query alone.
//! * [`Expert::TripleRank`] — top triples by query/triple cosine similarity.
//! * [`Expert::HopExpand`] — nearest seed entities, then their k-hop
//!   neighborhoods (union).
//! * [`Expert::PprForest`] — personalized PageRank from the seeds, keep the
//!   highest-mass nodes, connect them with a cheapest spanning forest where an
//!   edge costs `1 - cos(query, relation)`.
//!
//! All outputs are deterministically ordered; ties break on ascending ids.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use crate::clock::Clock;
use crate::embed::{cosine, IndexKind, TextEncoder, VectorIndex};
use crate::kg::{EntityId, KnowledgeGraph};
use crate::CoreError;

/// Retrieval strategy selected by the router, ordered by nominal cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Expert {
    /// Answer directly; retrieves nothing.
    Direct,
    /// Flat ranking of triples by embedding similarity.
    TripleRank,
    /// Seed entities plus their k-hop neighborhoods.
    HopExpand,
    /// Random-walk mass selection plus spanning-forest pruning.
    PprForest,
}

pub const ALL_EXPERTS: [Expert; 4] =
    [Expert::Direct, Expert::TripleRank, Expert::HopExpand, Expert::PprForest];

impl Expert {
    /// Dense index 0..4, usable as an action id.
    pub fn index(self) -> usize {
        match self {
            Expert::Direct => 0,
            Expert::TripleRank => 1,
            Expert::HopExpand => 2,
            Expert::PprForest => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Expert> {
        ALL_EXPERTS.get(i).copied()
    }

    /// Nominal retrieval cost charged against the information gain.
    pub fn cost(self) -> f64 {
        match self {
            Expert::Direct => 0.0,
            Expert::TripleRank => 1.0,
            Expert::HopExpand => 2.0,
            Expert::PprForest => 4.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Expert::Direct => "direct",
            Expert::TripleRank => "triple-rank",
            Expert::HopExpand => "hop-expand",
            Expert::PprForest => "ppr-forest",
        }
    }
}

/// Tunable limits shared by the retrieval strategies.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalBudget {
    /// Seed entities taken from the entity index (also scales the flat
    /// triple budget).
    pub seed_count: usize,
    /// Flat-ranking budget is `triples_per_seed * seed_count` triples.
    pub triples_per_seed: usize,
    /// Neighborhood radius for the hop expansion.
    pub hop_k: usize,
    /// Random-walk restart probability.
    pub ppr_restart: f64,
    /// L1 convergence threshold for the random walk.
    pub ppr_tol: f64,
    /// Iteration cap for the random walk.
    pub ppr_max_iter: usize,
    /// Nodes kept from the random-walk ranking.
    pub ppr_node_budget: usize,
}

impl Default for RetrievalBudget {
    fn default() -> Self {
        Self {
            seed_count: 3,
            triples_per_seed: 5,
            hop_k: 1,
            ppr_restart: 0.15,
            ppr_tol: 1e-8,
            ppr_max_iter: 100,
            ppr_node_budget: 20,
        }
    }
}

impl RetrievalBudget {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.seed_count == 0 {
            return Err(CoreError::BadParam { name: "seed_count", why: "must be >= 1" });
        }
        if self.triples_per_seed == 0 {
            return Err(CoreError::BadParam { name: "triples_per_seed", why: "must be >= 1" });
        }
        if !(self.ppr_restart > 0.0 && self.ppr_restart < 1.0) {
            return Err(CoreError::BadParam { name: "ppr_restart", why: "must lie in (0, 1)" });
        }
        if !(self.ppr_tol > 0.0) {
            return Err(CoreError::BadParam { name: "ppr_tol", why: "must be > 0" });
        }
        if self.ppr_max_iter == 0 {
            return Err(CoreError::BadParam { name: "ppr_max_iter", why: "must be >= 1" });
        }
        if self.ppr_node_budget == 0 {
            return Err(CoreError::BadParam { name: "ppr_node_budget", why: "must be >= 1" });
        }
        Ok(())
    }
}

/// Embedding indexes the experts consult. Row counts must match the graph.
#[derive(Debug, Clone)]
pub struct Indexes {
    pub entity: VectorIndex,
    pub relation: VectorIndex,
    pub triple: VectorIndex,
}

impl Indexes {
    /// Encode every entity, relation, and triple text of the graph into the
    /// three vector indexes the experts search.
    pub fn build<E: TextEncoder + ?Sized>(
        kg: &KnowledgeGraph,
        encoder: &E,
    ) -> Result<Self, CoreError> {
        let dim = encoder.dim();
        let entity: Vec<Vec<f32>> =
            kg.entity_texts().iter().map(|t| encoder.encode(t)).collect();
        let relation: Vec<Vec<f32>> =
            kg.relation_texts().iter().map(|t| encoder.encode(t)).collect();
        let triple: Vec<Vec<f32>> =
            (0..kg.n_triples()).map(|i| encoder.encode(&kg.triple_text(i))).collect();
        Ok(Self {
            entity: VectorIndex::build(IndexKind::Entity, dim, entity)?,
            relation: VectorIndex::build(IndexKind::Relation, dim, relation)?,
            triple: VectorIndex::build(IndexKind::Triple, dim, triple)?,
        })
    }

    pub fn validate(&self, kg: &KnowledgeGraph) -> Result<(), CoreError> {
        for (idx, want) in [
            (&self.entity, kg.n_entities()),
            (&self.relation, kg.n_relations()),
            (&self.triple, kg.n_triples()),
        ] {
            if idx.len() != want {
                return Err(CoreError::DimMismatch { expected: want, got: idx.len() });
            }
        }
        if self.entity.dim() != self.relation.dim() || self.entity.dim() != self.triple.dim() {
            return Err(CoreError::DimMismatch {
                expected: self.entity.dim(),
                got: self.relation.dim().min(self.triple.dim()),
            });
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.entity.dim()
    }
}

/// One expert's output: an ordered evidence subgraph plus timing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Retrieved {
    pub expert: Expert,
    /// Entity seeds that anchored the retrieval (empty for the flat ranker).
    pub seeds: Vec<EntityId>,
    /// All entities touched by the returned triples (plus seeds), ascending.
    pub entities: Vec<EntityId>,
    /// Triple indexes into the graph. Similarity-ranked for the flat ranker,
    /// ascending for the structural experts.
    pub triples: Vec<usize>,
    /// Wall-clock nanoseconds the strategy took, per the injected clock.
    pub elapsed_ns: u64,
}

impl Retrieved {
    fn empty(expert: Expert) -> Self {
        Self { expert, seeds: Vec::new(), entities: Vec::new(), triples: Vec::new(), elapsed_ns: 0 }
    }
}

/// Result of the personalized random walk.
#[derive(Debug, Clone, PartialEq)]
pub struct PprResult {
    /// Stationary mass per entity; sums to 1.
    pub scores: Vec<f64>,
    /// Power iterations performed.
    pub iterations: usize,
    /// Whether the L1 change dropped below tolerance before the cap.
    pub converged: bool,
}

/// Personalized PageRank over the undirected, degree-normalized graph.
///
/// Restart mass is spread uniformly over `seeds`; nodes without edges hand
/// their mass back to the restart distribution. Iteration stops when the L1
/// change between sweeps falls below `tol` or after `max_iter` sweeps.
pub fn personalized_pagerank(
    kg: &KnowledgeGraph,
    seeds: &[EntityId],
    restart: f64,
    tol: f64,
    max_iter: usize,
) -> Result<PprResult, CoreError> {
    if seeds.is_empty() {
        return Err(CoreError::Empty("seed set"));
    }
    if !(restart > 0.0 && restart < 1.0) {
        return Err(CoreError::BadParam { name: "restart", why: "must lie in (0, 1)" });
    }
    if !(tol > 0.0) {
        return Err(CoreError::BadParam { name: "tol", why: "must be > 0" });
    }
    let n = kg.n_entities();
    let mut r = vec![0.0f64; n];
    for &s in seeds {
        if s >= n {
            return Err(CoreError::BadParam { name: "seeds", why: "entity id out of range" });
        }
        r[s] += 1.0 / seeds.len() as f64;
    }
    let mut p = r.clone();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        let mut next = vec![0.0f64; n];
        let mut dangling = 0.0f64;
        for u in 0..n {
            let deg = kg.degree(u);
            if deg == 0 {
                dangling += p[u];
                continue;
            }
            let share = p[u] / deg as f64;
            for &(v, _) in kg.adjacent(u) {
                next[v] += share;
            }
        }
        let mut delta = 0.0f64;
        for v in 0..n {
            let val = restart * r[v] + (1.0 - restart) * (next[v] + dangling * r[v]);
            delta += (val - p[v]).abs();
            next[v] = val;
        }
        p = next;
        iterations += 1;
        if delta < tol {
            converged = true;
            break;
        }
    }
    Ok(PprResult { scores: p, iterations, converged })
}

/// Triple indexes whose endpoints both lie in `nodes`, ascending.
pub fn induced_triples(kg: &KnowledgeGraph, nodes: &[EntityId]) -> Vec<usize> {
    let set: BTreeSet<EntityId> = nodes.iter().copied().collect();
    let mut out = Vec::new();
    for &u in &set {
        for &(v, tidx) in kg.adjacent(u) {
            if set.contains(&v) {
                out.push(tidx);
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Cheapest spanning forest over the subgraph induced by `nodes`.
///
/// Edge cost is `1 - cos(query, relation embedding)`; equal costs break on
/// ascending triple index, so the result is deterministic. Self-loops never
/// join components and are dropped.
pub fn spanning_forest(
    kg: &KnowledgeGraph,
    nodes: &[EntityId],
    query: &[f32],
    relation_index: &VectorIndex,
) -> Result<Vec<usize>, CoreError> {
    if query.len() != relation_index.dim() {
        return Err(CoreError::DimMismatch { expected: relation_index.dim(), got: query.len() });
    }
    let pos: BTreeMap<EntityId, usize> =
        nodes.iter().copied().enumerate().map(|(i, e)| (e, i)).collect();
    let mut rel_cost: BTreeMap<usize, f64> = BTreeMap::new();
    let mut edges: Vec<(f64, usize)> = Vec::new();
    for tidx in induced_triples(kg, nodes) {
        let t = kg.triple(tidx);
        if t.head == t.tail {
            continue;
        }
        let cost = *rel_cost
            .entry(t.rel)
            .or_insert_with(|| 1.0 - cosine(query, relation_index.row(t.rel)));
        edges.push((cost, tidx));
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut uf = UnionFind::new(pos.len());
    let mut picked = Vec::new();
    for (_, tidx) in edges {
        let t = kg.triple(tidx);
        if uf.union(pos[&t.head], pos[&t.tail]) {
            picked.push(tidx);
            if picked.len() + 1 == pos.len() {
                break;
            }
        }
    }
    picked.sort_unstable();
    Ok(picked)
}

/// Disjoint-set forest with path halving and union by size.
struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), size: vec![1; n] }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns true when the two elements were in different sets.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (big, small) = if self.size[ra] >= self.size[rb] { (ra, rb) } else { (rb, ra) };
        self.parent[small] = big;
        self.size[big] += self.size[small];
        true
    }
}

/// Seed entities: the `m` nearest rows of the entity index to the query.
pub fn seed_entities(
    indexes: &Indexes,
    query: &[f32],
    m: usize,
) -> Result<Vec<EntityId>, CoreError> {
    Ok(indexes.entity.top_m(query, m)?.into_iter().map(|(id, _)| id).collect())
}

/// Run one retrieval strategy against the graph.
pub fn run_expert<C: Clock + ?Sized>(
    expert: Expert,
    kg: &KnowledgeGraph,
    indexes: &Indexes,
    query: &[f32],
    budget: &RetrievalBudget,
    clock: &C,
) -> Result<Retrieved, CoreError> {
    budget.validate()?;
    let start = clock.now_ns();
    let mut out = match expert {
        Expert::Direct => Retrieved::empty(Expert::Direct),
        Expert::TripleRank => {
            if kg.n_triples() == 0 {
                Retrieved::empty(expert)
            } else {
                let m = budget.triples_per_seed * budget.seed_count;
                let ranked = indexes.triple.top_m(query, m)?;
                let triples: Vec<usize> = ranked.into_iter().map(|(id, _)| id).collect();
                let mut entities: Vec<EntityId> = triples
                    .iter()
                    .flat_map(|&t| {
                        let tr = kg.triple(t);
                        [tr.head, tr.tail]
                    })
                    .collect();
                entities.sort_unstable();
                entities.dedup();
                Retrieved { expert, seeds: Vec::new(), entities, triples, elapsed_ns: 0 }
            }
        }
        Expert::HopExpand => {
            let seeds = seed_entities(indexes, query, budget.seed_count)?;
            let mut entities: BTreeSet<EntityId> = BTreeSet::new();
            let mut triples: BTreeSet<usize> = BTreeSet::new();
            for &s in &seeds {
                let n = kg.k_hop(s, budget.hop_k)?;
                entities.extend(n.entities);
                triples.extend(n.triples);
            }
            Retrieved {
                expert,
                seeds,
                entities: entities.into_iter().collect(),
                triples: triples.into_iter().collect(),
                elapsed_ns: 0,
            }
        }
        Expert::PprForest => {
            let seeds = seed_entities(indexes, query, budget.seed_count)?;
            let ppr = personalized_pagerank(
                kg,
                &seeds,
                budget.ppr_restart,
                budget.ppr_tol,
                budget.ppr_max_iter,
            )?;
            // Rank by mass, ties on ascending id; zero-mass nodes are
            // unreachable from the seeds and never enter the subgraph.
            let mut ranked: Vec<(f64, EntityId)> = ppr
                .scores
                .iter()
                .enumerate()
                .filter(|&(_, &s)| s > 0.0)
                .map(|(e, &s)| (s, e))
                .collect();
            ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            ranked.truncate(budget.ppr_node_budget);
            let nodes: Vec<EntityId> = ranked.into_iter().map(|(_, e)| e).collect();
            let triples = spanning_forest(kg, &nodes, query, &indexes.relation)?;
            let mut entities = nodes;
            entities.sort_unstable();
            Retrieved { expert, seeds, entities, triples, elapsed_ns: 0 }
        }
    };
    out.elapsed_ns = clock.now_ns().saturating_sub(start);
    Ok(out)
}
