//! Deterministic synthetic benchmark world with four planted regimes, one per
//! retrieval strategy.
//!
//! Items come in families of twelve; a user watches one family in random
//! order, and the task is always "which family member comes next". What makes
//! the four regimes different is *where* the family structure is visible:
//!
//! * saga: the family id is written into the titles, so the query alone
//!   suffices and the graph holds nothing (these items are isolated).
//! * brand: titles are bare identifier tokens with no shared marker at all —
//!   the query says nothing about kinship — but family members form a sparse
//!   ring of `linked` edges. Because nothing else in the catalog overlaps a
//!   brand query, a flat similarity ranking over triples surfaces the family
//!   ring (including the edges that name the held-out member) within a small
//!   budget.
//! * guild: members hang off a family hub (`joined`), but every member also
//!   carries many decoy edges whose texts tie the kin edges under the query
//!   (the ranking budget drowns in them) and whose graph mass starves the
//!   random walk. Only a seeded neighborhood expansion (two hops, no text
//!   ranking) reads through the decoys to the hub and back out to the family.
//! * forge: members connect only through a member -> relic -> foundry chain.
//!   The held-out member sits four undirected hops from any watched member,
//!   invisible to text ranking and too deep for the neighborhood expansion,
//!   while the random walk concentrates exactly on the family's little tree
//!   and a node-budget spanning forest verbalizes all of it.
//!
//! Each regime's families are split into a training pool and an evaluation
//! pool; evaluation users watch only evaluation-pool families. A recommender
//! therefore cannot answer evaluation queries by memorizing co-occurrence in
//! the training interactions — except for saga, families are only tied
//! together by the graph.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::kg::{ItemId, KnowledgeGraph, Triple};
use crate::rng::stream_rng;
use crate::CoreError;

/// Every family has exactly this many members; user sequences visit all of
/// them, which keeps "the next member" discoverable from any ten-item window.
pub const MEMBERS_PER_FAMILY: usize = 12;
/// Number of planted regimes.
pub const CLASS_COUNT: usize = 4;
/// Class marker written into titles (brand deliberately omits its marker:
/// "none of the known markers" is itself a learnable routing cue, and any
/// token shared across brand titles would hand the flat ranker spurious
/// overlap with every brand edge in the catalog).
pub const CLASS_WORDS: [&str; CLASS_COUNT] = ["saga", "brand", "guild", "forge"];

const REL_LINKED: usize = 0; // brand ring
const REL_JOINED: usize = 1; // guild member -> hub
const REL_BOUND: usize = 2; // guild member -> decoy
const REL_CRAFTED: usize = 3; // forge member -> relic
const REL_TIED: usize = 4; // forge relic -> foundry

const TRAIN_USER_STREAM: u64 = 0x0100_0000;
const EVAL_USER_STREAM: u64 = 0x0200_0000;

/// Size and difficulty knobs for the generated world.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Families per regime; the catalog holds `48 * families_per_class` items.
    pub families_per_class: usize,
    /// Of those, the last `eval_families_per_class` of every regime are
    /// reserved for evaluation users. Training users never touch them, so a
    /// scorer cannot memorize evaluation kinships from interactions; at
    /// evaluation time kinship must come from the query (saga) or the graph.
    pub eval_families_per_class: usize,
    pub train_users: usize,
    pub eval_users: usize,
    /// Decoy edges per guild item (the wall that blinds flat ranking and
    /// starves the random walk).
    pub decoys_per_item: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            families_per_class: 12,
            eval_families_per_class: 4,
            train_users: 1000,
            eval_users: 520,
            decoys_per_item: 10,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.families_per_class == 0 {
            return Err(CoreError::BadParam {
                name: "families_per_class",
                why: "must be at least 1",
            });
        }
        if self.eval_families_per_class == 0
            || self.eval_families_per_class >= self.families_per_class
        {
            return Err(CoreError::BadParam {
                name: "eval_families_per_class",
                why: "must leave both pools non-empty (0 < eval < families_per_class)",
            });
        }
        if self.train_users == 0 || self.eval_users == 0 {
            return Err(CoreError::BadParam {
                name: "train_users/eval_users",
                why: "must be at least 1",
            });
        }
        Ok(())
    }

    /// Catalog size.
    pub fn n_items(&self) -> usize {
        CLASS_COUNT * self.families_per_class * MEMBERS_PER_FAMILY
    }
}

/// A generated world: the graph, the catalog size, and per-user interaction
/// sequences (each a full family in random watch order).
#[derive(Debug, Clone)]
pub struct SynthWorld {
    pub kg: KnowledgeGraph,
    pub n_items: usize,
    pub families_per_class: usize,
    pub eval_families_per_class: usize,
    pub train_sequences: Vec<Vec<ItemId>>,
    pub eval_sequences: Vec<Vec<ItemId>>,
    /// Regime index per training user (diagnostics only).
    pub train_user_class: Vec<usize>,
    pub eval_user_class: Vec<usize>,
}

impl SynthWorld {
    pub fn item_class(&self, item: ItemId) -> usize {
        item / (self.families_per_class * MEMBERS_PER_FAMILY)
    }

    /// Global family id of an item.
    pub fn item_family(&self, item: ItemId) -> usize {
        item / MEMBERS_PER_FAMILY
    }

    /// Whether an item belongs to an evaluation-only family.
    pub fn is_eval_item(&self, item: ItemId) -> bool {
        self.item_family(item) % self.families_per_class
            >= self.families_per_class - self.eval_families_per_class
    }
}

fn item_id(class: usize, fam: usize, member: usize, families_per_class: usize) -> usize {
    (class * families_per_class + fam) * MEMBERS_PER_FAMILY + member
}

/// One user's sequence: a uniformly shuffled visit of one whole family drawn
/// from the given local-family pool.
fn user_sequence<R: Rng>(
    class: usize,
    fam_pool: core::ops::Range<usize>,
    families_per_class: usize,
    rng: &mut R,
) -> Vec<ItemId> {
    let fam = rng.gen_range(fam_pool);
    let mut seq: Vec<ItemId> = (0..MEMBERS_PER_FAMILY)
        .map(|j| item_id(class, fam, j, families_per_class))
        .collect();
    seq.shuffle(rng);
    seq
}

/// Generate the world deterministically from the config seed.
pub fn generate(cfg: &SynthConfig) -> Result<SynthWorld, CoreError> {
    cfg.validate()?;
    let f = cfg.families_per_class;
    let n_items = cfg.n_items();

    // Items first, so item id == entity id. Every title carries three
    // item-unique tokens: under presence hashing a text must collide with
    // the query in three independent buckets before it can tie a genuine
    // kin match, which keeps similarity rankings and seed selection stable.
    let mut entity_text: Vec<String> = Vec::new();
    for class in 0..CLASS_COUNT {
        for fam in 0..f {
            for _ in 0..MEMBERS_PER_FAMILY {
                let id = entity_text.len();
                let title = match class {
                    // Family id in the open (twice, so family overlap beats
                    // any single stray collision): the query alone
                    // identifies kin.
                    0 => format!("saga f{fam} g{fam} u{id} part"),
                    // No class marker and no shared filler: a brand query
                    // overlaps nothing in the catalog except its own
                    // family's ring edges.
                    1 => format!("u{id} e{id} o{id}"),
                    // Class marker plus unique tokens, no family marker:
                    // kinship is only in the graph.
                    _ => format!("{} u{id} e{id} o{id} part", CLASS_WORDS[class]),
                };
                entity_text.push(title);
            }
        }
    }

    let mut triples: Vec<Triple> = Vec::new();

    // brand: a ring of `linked` edges; the ring is each family's only
    // structure and its own connected component.
    for fam in 0..f {
        for j in 0..MEMBERS_PER_FAMILY {
            let a = item_id(1, fam, j, f);
            let b = item_id(1, fam, (j + 1) % MEMBERS_PER_FAMILY, f);
            triples.push(Triple::new(a, REL_LINKED, b));
        }
    }

    // guild: one hub per family plus decoy walls on every member. The decoys
    // crowd the flat ranker's tie-broken budget and soak up random-walk mass,
    // so only the hop expansion reaches the hub and the rest of the family.
    let mut hub_of_fam: Vec<usize> = Vec::with_capacity(f);
    for fam in 0..f {
        hub_of_fam.push(entity_text.len());
        entity_text.push(format!("circle c{fam} hall"));
    }
    for fam in 0..f {
        for j in 0..MEMBERS_PER_FAMILY {
            let m = item_id(2, fam, j, f);
            triples.push(Triple::new(m, REL_JOINED, hub_of_fam[fam]));
            for k in 0..cfg.decoys_per_item {
                let d = entity_text.len();
                entity_text.push(format!("texture x{m}k{k} grain"));
                triples.push(Triple::new(m, REL_BOUND, d));
            }
        }
    }

    // forge: member -> relic -> foundry, a three-hop bridge between kin.
    // Each family is a closed 25-node component, so a walk seeded on watched
    // members covers exactly the family tree.
    for fam in 0..f {
        let foundry = entity_text.len();
        entity_text.push(format!("foundry w{fam} anvil"));
        for j in 0..MEMBERS_PER_FAMILY {
            let m = item_id(3, fam, j, f);
            let relic = entity_text.len();
            entity_text.push(format!("relic r{m} ember"));
            triples.push(Triple::new(m, REL_CRAFTED, relic));
            triples.push(Triple::new(relic, REL_TIED, foundry));
        }
    }

    let relation_text: Vec<String> =
        ["linked", "joined", "bound", "crafted", "tied"].iter().map(|s| s.to_string()).collect();

    let (mut kg, _warnings) = KnowledgeGraph::new(entity_text, relation_text, triples)?;
    kg.set_item_map((0..n_items).map(|i| (i, i)).collect())?;

    let mut world = SynthWorld {
        kg,
        n_items,
        families_per_class: f,
        eval_families_per_class: cfg.eval_families_per_class,
        train_sequences: Vec::with_capacity(cfg.train_users),
        eval_sequences: Vec::with_capacity(cfg.eval_users),
        train_user_class: Vec::with_capacity(cfg.train_users),
        eval_user_class: Vec::with_capacity(cfg.eval_users),
    };
    let split = f - cfg.eval_families_per_class;
    for u in 0..cfg.train_users {
        let class = u % CLASS_COUNT;
        let mut urng = stream_rng(cfg.seed, TRAIN_USER_STREAM + u as u64);
        world
            .train_sequences
            .push(user_sequence(class, 0..split, f, &mut urng));
        world.train_user_class.push(class);
    }
    for u in 0..cfg.eval_users {
        let class = u % CLASS_COUNT;
        let mut urng = stream_rng(cfg.seed, EVAL_USER_STREAM + u as u64);
        world
            .eval_sequences
            .push(user_sequence(class, split..f, f, &mut urng));
        world.eval_user_class.push(class);
    }
    Ok(world)
}

/// How far the attribute audit walks when collecting an item's graph
/// attributes: three undirected hops cover every family-defining entity in
/// all three graph regimes (ring neighbors, hubs, relics, foundries, and
/// sibling relics through them).
pub const AUDIT_HOP_RADIUS: usize = 3;

/// Result of [`audit_hard_instances`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HardAudit {
    /// Instances whose answer requires graph evidence and whose pool holds
    /// no family sibling of the target.
    pub hard: usize,
    /// Instances excluded because the query text already identifies kin.
    pub text_resolvable: usize,
    /// Instances excluded because a pool distractor shares the target's
    /// family (a candidate that legitimately ties on graph evidence).
    pub sibling_in_pool: usize,
    /// Hard instances where the target was NOT the unique candidate sharing
    /// at least two graph attributes with the context. Zero on a sound
    /// generator.
    pub violations: usize,
}

/// Entities within `AUDIT_HOP_RADIUS` undirected hops of an item, excluding
/// the item's own entity: the item's graph attributes. Plain breadth-first
/// search, independent of the retrieval strategies.
fn item_attributes(kg: &KnowledgeGraph, item: ItemId) -> BTreeSet<usize> {
    let start = kg.item_entity(item).expect("audited items are mapped");
    let mut seen: BTreeSet<usize> = BTreeSet::new();
    seen.insert(start);
    let mut frontier = vec![start];
    for _ in 0..AUDIT_HOP_RADIUS {
        let mut next = Vec::new();
        for &e in &frontier {
            for &(nb, _) in kg.adjacent(e) {
                if seen.insert(nb) {
                    next.push(nb);
                }
            }
        }
        frontier = next;
    }
    seen.remove(&start);
    seen
}

/// Generator self-check: in every "hard" evaluation instance — one whose
/// regime plants kinship only in the graph and whose candidate pool contains
/// no family sibling of the target — the target must be the unique candidate
/// sharing at least two graph attributes with the watched context. Attributes
/// are counted exhaustively by breadth-first search, so this audits the
/// planted structure without touching any retrieval code.
pub fn audit_hard_instances(
    world: &SynthWorld,
    instances: &[crate::pipeline::Instance],
    class_of_user: &[usize],
) -> HardAudit {
    let mut title_to_item: BTreeMap<String, ItemId> = BTreeMap::new();
    for item in 0..world.n_items {
        title_to_item.insert(world.kg.item_text(item), item);
    }
    let mut audit = HardAudit::default();
    for inst in instances {
        if class_of_user[inst.user] == 0 {
            audit.text_resolvable += 1;
            continue;
        }
        let pool_items: Vec<ItemId> =
            inst.pool_texts.iter().map(|t| title_to_item[t]).collect();
        let target_item = pool_items[inst.target];
        let fam = world.item_family(target_item);
        if pool_items
            .iter()
            .enumerate()
            .any(|(i, &o)| i != inst.target && world.item_family(o) == fam)
        {
            audit.sibling_in_pool += 1;
            continue;
        }
        audit.hard += 1;
        let mut context_attrs: BTreeSet<usize> = BTreeSet::new();
        for h in &inst.history {
            let item = title_to_item[h];
            context_attrs.insert(world.kg.item_entity(item).expect("mapped"));
            context_attrs.extend(item_attributes(&world.kg, item));
        }
        let sharers: Vec<usize> = pool_items
            .iter()
            .enumerate()
            .filter(|&(_, &o)| {
                item_attributes(&world.kg, o)
                    .intersection(&context_attrs)
                    .take(2)
                    .count()
                    >= 2
            })
            .map(|(i, _)| i)
            .collect();
        if sharers != vec![inst.target] {
            audit.violations += 1;
        }
    }
    audit
}
