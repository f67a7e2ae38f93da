//! In-memory knowledge graph with undirected adjacency and k-hop expansion.
//!
//! Ids are dense indexes into the entity/relation tables. Triples are stored
//! directed (head, relation, tail) but traversal is undirected: every triple
//! contributes adjacency in both directions, a self-loop once.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::embed;
use crate::CoreError;

pub type EntityId = usize;
pub type RelationId = usize;
pub type ItemId = usize;

/// Directed edge (head, relation, tail) between entity ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub rel: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, rel: RelationId, tail: EntityId) -> Self {
        Self { head, rel, tail }
    }
}

/// Non-fatal observations from graph construction.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KgWarnings {
    /// Exact (head, rel, tail) duplicates dropped, keeping the first.
    pub duplicate_triples: usize,
    /// Triples with head == tail; kept, flagged.
    pub self_loops: usize,
}

/// Entity/relation distance-limited neighborhood.
///
/// `entities` are all nodes within distance <= k of the seed; `triples` are
/// graph edges with both endpoints in that set and at least one endpoint at
/// distance <= k-1 (so edges purely between frontier nodes are excluded).
/// Both lists are ascending and deduplicated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighborhood {
    pub entities: Vec<EntityId>,
    pub triples: Vec<usize>,
}

/// Knowledge graph with text tables, adjacency, and an item-to-entity map.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entity_text: Vec<String>,
    relation_text: Vec<String>,
    triples: Vec<Triple>,
    adj: Vec<Vec<(EntityId, usize)>>,
    item_map: BTreeMap<ItemId, EntityId>,
}

impl KnowledgeGraph {
    /// Build a graph, validating references and deduplicating exact repeats.
    pub fn new(
        entity_text: Vec<String>,
        relation_text: Vec<String>,
        raw_triples: Vec<Triple>,
    ) -> Result<(Self, KgWarnings), CoreError> {
        let ne = entity_text.len();
        let nr = relation_text.len();
        let mut warnings = KgWarnings::default();
        let mut seen: BTreeMap<(usize, usize, usize), ()> = BTreeMap::new();
        let mut triples = Vec::with_capacity(raw_triples.len());
        for (i, t) in raw_triples.into_iter().enumerate() {
            if t.head >= ne {
                return Err(CoreError::DanglingEntity { triple: i, entity: t.head });
            }
            if t.tail >= ne {
                return Err(CoreError::DanglingEntity { triple: i, entity: t.tail });
            }
            if t.rel >= nr {
                return Err(CoreError::DanglingRelation { triple: i, relation: t.rel });
            }
            if seen.insert((t.head, t.rel, t.tail), ()).is_some() {
                warnings.duplicate_triples += 1;
                continue;
            }
            if t.head == t.tail {
                warnings.self_loops += 1;
            }
            triples.push(t);
        }
        let mut adj: Vec<Vec<(EntityId, usize)>> = vec![Vec::new(); ne];
        for (idx, t) in triples.iter().enumerate() {
            adj[t.head].push((t.tail, idx));
            if t.tail != t.head {
                adj[t.tail].push((t.head, idx));
            }
        }
        Ok((
            Self { entity_text, relation_text, triples, adj, item_map: BTreeMap::new() },
            warnings,
        ))
    }

    pub fn n_entities(&self) -> usize {
        self.entity_text.len()
    }

    pub fn n_relations(&self) -> usize {
        self.relation_text.len()
    }

    pub fn n_triples(&self) -> usize {
        self.triples.len()
    }

    pub fn entity_text(&self, e: EntityId) -> &str {
        &self.entity_text[e]
    }

    pub fn relation_text(&self, r: RelationId) -> &str {
        &self.relation_text[r]
    }

    pub fn entity_texts(&self) -> &[String] {
        &self.entity_text
    }

    pub fn relation_texts(&self) -> &[String] {
        &self.relation_text
    }

    pub fn triple(&self, idx: usize) -> Triple {
        self.triples[idx]
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    /// Undirected incident edges of `e` as (neighbor, triple index) pairs.
    pub fn adjacent(&self, e: EntityId) -> &[(EntityId, usize)] {
        &self.adj[e]
    }

    pub fn degree(&self, e: EntityId) -> usize {
        self.adj[e].len()
    }

    /// Embedding text of a triple: space-joined head/relation/tail texts.
    pub fn triple_text(&self, idx: usize) -> String {
        let t = self.triples[idx];
        embed::triple_text(
            &self.entity_text[t.head],
            &self.relation_text[t.rel],
            &self.entity_text[t.tail],
        )
    }

    /// Install an item-to-entity alignment; entries must point inside the
    /// entity table and no two items may share an entity.
    pub fn set_item_map(&mut self, map: BTreeMap<ItemId, EntityId>) -> Result<(), CoreError> {
        let mut used: BTreeMap<EntityId, ItemId> = BTreeMap::new();
        for (&item, &ent) in &map {
            if ent >= self.n_entities() {
                return Err(CoreError::BadItemMapping { item, entity: ent });
            }
            if used.insert(ent, item).is_some() {
                return Err(CoreError::BadItemMapping { item, entity: ent });
            }
        }
        self.item_map = map;
        Ok(())
    }

    /// Align items to entities by exact case-insensitive description match.
    ///
    /// Fallback for datasets without an explicit map file. Only items absent
    /// from the current map are matched; ambiguous texts (two entities with
    /// the same folded description) match the lowest entity id.
    pub fn align_items_by_text(&mut self, items: &[(ItemId, String)]) -> usize {
        let mut by_text: BTreeMap<String, EntityId> = BTreeMap::new();
        for (e, text) in self.entity_text.iter().enumerate().rev() {
            by_text.insert(text.to_ascii_lowercase(), e);
        }
        let mut taken: alloc::collections::BTreeSet<EntityId> =
            self.item_map.values().copied().collect();
        let mut added = 0;
        for (item, text) in items {
            if self.item_map.contains_key(item) {
                continue;
            }
            if let Some(&e) = by_text.get(&text.to_ascii_lowercase()) {
                if taken.insert(e) {
                    self.item_map.insert(*item, e);
                    added += 1;
                }
            }
        }
        added
    }

    pub fn item_entity(&self, item: ItemId) -> Option<EntityId> {
        self.item_map.get(&item).copied()
    }

    pub fn item_map(&self) -> &BTreeMap<ItemId, EntityId> {
        &self.item_map
    }

    /// Display text for an item: mapped entity description, else a placeholder.
    pub fn item_text(&self, item: ItemId) -> String {
        match self.item_entity(item) {
            Some(e) => self.entity_text[e].clone(),
            None => alloc::format!("item {item}"),
        }
    }

    /// Entities within distance <= k of `seed` plus the connecting triples.
    ///
    /// BFS over the undirected view. See [`Neighborhood`] for the exact edge
    /// rule; k = 0 yields just the seed and no triples.
    pub fn k_hop(&self, seed: EntityId, k: usize) -> Result<Neighborhood, CoreError> {
        if seed >= self.n_entities() {
            return Err(CoreError::BadParam { name: "seed", why: "entity id out of range" });
        }
        const UNSEEN: usize = usize::MAX;
        let mut dist = vec![UNSEEN; self.n_entities()];
        dist[seed] = 0;
        let mut frontier = vec![seed];
        let mut order = vec![seed];
        let mut level = 0usize;
        while level < k && !frontier.is_empty() {
            let mut next = Vec::new();
            for &u in &frontier {
                for &(v, _) in &self.adj[u] {
                    if dist[v] == UNSEEN {
                        dist[v] = level + 1;
                        next.push(v);
                        order.push(v);
                    }
                }
            }
            frontier = next;
            level += 1;
        }
        let mut triples: Vec<usize> = Vec::new();
        for &u in &order {
            if dist[u] >= k {
                continue;
            }
            for &(v, tidx) in &self.adj[u] {
                if dist[v] != UNSEEN {
                    triples.push(tidx);
                }
            }
        }
        // Self-loops at nodes with dist <= k-1 enter once via the single
        // adjacency entry; shared edges enter from both endpoints.
        triples.sort_unstable();
        triples.dedup();
        order.sort_unstable();
        Ok(Neighborhood { entities: order, triples })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::borrow::ToOwned;
    use alloc::collections::BTreeSet;
    use alloc::format;
    use rand::Rng;
    use rand::SeedableRng;

    fn texts(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    fn star() -> KnowledgeGraph {
        // 0 is the hub: 0-1, 0-2, 0-3.
        let triples = vec![Triple::new(0, 0, 1), Triple::new(0, 0, 2), Triple::new(0, 0, 3)];
        KnowledgeGraph::new(texts("e", 4), texts("r", 1), triples).unwrap().0
    }

    #[test]
    fn construction_counts_and_dedup() {
        let triples = vec![
            Triple::new(0, 0, 1),
            Triple::new(1, 1, 2),
            Triple::new(0, 0, 1), // exact duplicate
            Triple::new(2, 0, 2), // self-loop
        ];
        let (kg, warn) = KnowledgeGraph::new(texts("e", 3), texts("r", 2), triples).unwrap();
        assert_eq!(kg.n_entities(), 3);
        assert_eq!(kg.n_relations(), 2);
        assert_eq!(kg.n_triples(), 3);
        assert_eq!(warn.duplicate_triples, 1);
        assert_eq!(warn.self_loops, 1);
        // Entity 0 has two incident entries? 0-1 edge only (plus none else).
        assert_eq!(kg.degree(0), 1);
        // Self-loop contributes a single adjacency entry.
        assert_eq!(kg.degree(2), 2); // 1-2 edge + loop at 2
    }

    #[test]
    fn dangling_references_name_the_offender() {
        let err = KnowledgeGraph::new(texts("e", 2), texts("r", 1), vec![Triple::new(0, 0, 99)])
            .unwrap_err();
        assert_eq!(err, CoreError::DanglingEntity { triple: 0, entity: 99 });
        let err = KnowledgeGraph::new(texts("e", 2), texts("r", 1), vec![Triple::new(0, 7, 1)])
            .unwrap_err();
        assert_eq!(err, CoreError::DanglingRelation { triple: 0, relation: 7 });
    }

    #[test]
    fn k_hop_star_and_zero() {
        let kg = star();
        let n0 = kg.k_hop(0, 0).unwrap();
        assert_eq!(n0.entities, vec![0]);
        assert!(n0.triples.is_empty());
        let n1 = kg.k_hop(0, 1).unwrap();
        assert_eq!(n1.entities, vec![0, 1, 2, 3]);
        assert_eq!(n1.triples, vec![0, 1, 2]);
        // From a leaf, one hop reaches only the hub; the leaf-hub edge joins,
        // the hub's other edges do not (hub is at frontier distance 1).
        let leaf = kg.k_hop(1, 1).unwrap();
        assert_eq!(leaf.entities, vec![0, 1]);
        assert_eq!(leaf.triples, vec![0]);
    }

    #[test]
    fn k_hop_path_graph() {
        // 0-1-2-3 path.
        let triples = vec![Triple::new(0, 0, 1), Triple::new(1, 0, 2), Triple::new(2, 0, 3)];
        let (kg, _) = KnowledgeGraph::new(texts("e", 4), texts("r", 1), triples).unwrap();
        let n = kg.k_hop(0, 1).unwrap();
        assert_eq!(n.entities, vec![0, 1]);
        assert_eq!(n.triples, vec![0]);
        let n = kg.k_hop(0, 2).unwrap();
        assert_eq!(n.entities, vec![0, 1, 2]);
        assert_eq!(n.triples, vec![0, 1]);
        let n = kg.k_hop(3, 10).unwrap();
        assert_eq!(n.entities, vec![0, 1, 2, 3]);
        assert_eq!(n.triples, vec![0, 1, 2]);
    }

    /// Independent BFS oracle following the same neighborhood definition.
    fn bfs_oracle(kg: &KnowledgeGraph, seed: usize, k: usize) -> (BTreeSet<usize>, BTreeSet<usize>) {
        let mut dist: BTreeMap<usize, usize> = BTreeMap::new();
        dist.insert(seed, 0);
        let mut queue = alloc::collections::VecDeque::new();
        queue.push_back(seed);
        while let Some(u) = queue.pop_front() {
            let du = dist[&u];
            if du == k {
                continue;
            }
            for t in kg.triples() {
                let other = if t.head == u {
                    Some(t.tail)
                } else if t.tail == u {
                    Some(t.head)
                } else {
                    None
                };
                if let Some(v) = other {
                    if !dist.contains_key(&v) {
                        dist.insert(v, du + 1);
                        queue.push_back(v);
                    }
                }
            }
        }
        let ents: BTreeSet<usize> = dist.keys().copied().collect();
        let mut tris = BTreeSet::new();
        for (idx, t) in kg.triples().iter().enumerate() {
            let (Some(&dh), Some(&dt)) = (dist.get(&t.head), dist.get(&t.tail)) else {
                continue;
            };
            if dh < k || dt < k {
                tris.insert(idx);
            }
        }
        (ents, tris)
    }

    #[test]
    fn k_hop_matches_bfs_oracle_on_random_graphs() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for case in 0..30 {
            let ne = rng.gen_range(2..30);
            let nt = rng.gen_range(1..200);
            let triples: Vec<Triple> = (0..nt)
                .map(|_| Triple::new(rng.gen_range(0..ne), rng.gen_range(0..3), rng.gen_range(0..ne)))
                .collect();
            let (kg, _) = KnowledgeGraph::new(texts("e", ne), texts("r", 3), triples).unwrap();
            for k in 0..4 {
                let seed = rng.gen_range(0..ne);
                let got = kg.k_hop(seed, k).unwrap();
                let (ents, tris) = bfs_oracle(&kg, seed, k);
                assert_eq!(got.entities, ents.iter().copied().collect::<Vec<_>>(), "case {case} k {k}");
                assert_eq!(got.triples, tris.iter().copied().collect::<Vec<_>>(), "case {case} k {k}");
                // Monotone growth in k.
                if k > 0 {
                    let prev = kg.k_hop(seed, k - 1).unwrap();
                    let prev_e: BTreeSet<_> = prev.entities.iter().collect();
                    assert!(got.entities.iter().collect::<BTreeSet<_>>().is_superset(&prev_e));
                    let prev_t: BTreeSet<_> = prev.triples.iter().collect();
                    assert!(got.triples.iter().collect::<BTreeSet<_>>().is_superset(&prev_t));
                }
                // Every returned triple has both endpoints in the entity set.
                let eset: BTreeSet<_> = got.entities.iter().copied().collect();
                for &tidx in &got.triples {
                    let t = kg.triple(tidx);
                    assert!(eset.contains(&t.head) && eset.contains(&t.tail));
                }
            }
        }
    }

    #[test]
    fn item_map_validation_and_text_fallback() {
        let mut kg = star();
        let mut map = BTreeMap::new();
        map.insert(10usize, 1usize);
        map.insert(11, 2);
        kg.set_item_map(map).unwrap();
        assert_eq!(kg.item_entity(10), Some(1));
        assert_eq!(kg.item_text(10), "e1");
        assert_eq!(kg.item_text(99), "item 99");
        let mut bad = BTreeMap::new();
        bad.insert(1usize, 77usize);
        assert!(kg.set_item_map(bad).is_err());
        // Two items on one entity rejected.
        let mut dup = BTreeMap::new();
        dup.insert(1usize, 3usize);
        dup.insert(2, 3);
        assert!(kg.set_item_map(dup).is_err());
    }

    #[test]
    fn text_alignment_fallback_is_case_insensitive() {
        let mut kg = star();
        let added = kg.align_items_by_text(&[(5, "E2".to_owned()), (6, "nope".to_owned())]);
        assert_eq!(added, 1);
        assert_eq!(kg.item_entity(5), Some(2));
        assert_eq!(kg.item_entity(6), None);
    }

    #[test]
    fn triple_text_joins_descriptions() {
        let kg = star();
        assert_eq!(kg.triple_text(1), "e0 r0 e2");
    }
}
