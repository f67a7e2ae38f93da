//! Core engine for multi-granularity knowledge-graph retrieval and
//! recommendation.
//!
//! The pipeline couples three small trainable policies around a shared
//! knowledge graph:
//!
//! * a **router** that picks one of four retrieval experts per query
//!   (no retrieval, top triples, k-hop subgraph, PageRank-pruned spanning
//!   forest),
//! * an **alignment** policy that keeps or drops verbalized statements, and
//! * a **recommender** scoring a fixed candidate pool, trained with a
//!   reference-anchored pairwise preference loss.
//!
//! Training uses clipped policy-ratio updates with GAE over sparse terminal
//! rewards; the reward mixes recommendation confidence with a cost-penalized
//! information-gain term.
//!
//! This crate is `no_std`-compatible (requires `alloc`). Everything here is
//! deterministic given a seed: no clocks, threads, or IO. File formats, HTTP
//! backends, the CLI, and wall-clock timing live in the companion `gkg-cli`
//! crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod align;
pub mod clock;
pub mod embed;
pub mod eval;
pub mod experts;
pub mod kg;
pub mod pipeline;
pub mod prompts;
pub mod rec;
pub mod reward;
pub mod rng;
pub mod synth;
pub mod train;

pub use clock::{Clock, NullClock};
pub use embed::{cosine, HashEncoder, IndexKind, TextEncoder, VectorIndex};
pub use experts::{Expert, Indexes, Retrieved, RetrievalBudget};
pub use kg::{EntityId, ItemId, KnowledgeGraph, RelationId, Triple};
pub use pipeline::Pipeline;
pub use train::TrainConfig;

use alloc::string::String;
use core::fmt;

/// Unified error type for core operations.
///
/// Variants carry enough context to be actionable without a backtrace; the
/// std crate maps them onto process exit codes.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// A triple references an entity id outside the entity table.
    DanglingEntity { triple: usize, entity: usize },
    /// A triple references a relation id outside the relation table.
    DanglingRelation { triple: usize, relation: usize },
    /// An id table is not dense (ids must cover 0..n exactly once).
    NonDenseIds { kind: &'static str, id: usize },
    /// Item map entry pointing at a missing entity.
    BadItemMapping { item: usize, entity: usize },
    /// Query/row dimension mismatch against an index.
    DimMismatch { expected: usize, got: usize },
    /// Operation requires a non-empty index or pool.
    Empty(&'static str),
    /// A vector violated the unit-norm invariant.
    NotUnitNorm { row: usize },
    /// Parameter outside its documented range.
    BadParam { name: &'static str, why: &'static str },
    /// A loss or intermediate quantity left the finite range; signals a
    /// degenerate model state and aborts the surrounding update.
    NonFinite { what: &'static str },
    /// External generator failed and no fallback applies.
    Generator(String),
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::DanglingEntity { triple, entity } => {
                write!(f, "triple {triple} references unknown entity {entity}")
            }
            CoreError::DanglingRelation { triple, relation } => {
                write!(f, "triple {triple} references unknown relation {relation}")
            }
            CoreError::NonDenseIds { kind, id } => {
                write!(f, "{kind} ids must be dense 0..n; saw gap or duplicate at {id}")
            }
            CoreError::BadItemMapping { item, entity } => {
                write!(f, "item {item} maps to unknown entity {entity}")
            }
            CoreError::DimMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            CoreError::Empty(what) => write!(f, "{what} is empty"),
            CoreError::NotUnitNorm { row } => write!(f, "row {row} is not unit-norm"),
            CoreError::BadParam { name, why } => write!(f, "bad parameter {name}: {why}"),
            CoreError::NonFinite { what } => write!(f, "{what} is not finite"),
            CoreError::Generator(msg) => write!(f, "generator failure: {msg}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for CoreError {}

/// Text generation backend used for optional knowledge refinement and the
/// generative prediction path. Implementations live outside this crate; tests
/// use deterministic stubs.
pub trait TextGenerator {
    /// Generate a completion for `prompt` at the given sampling temperature.
    fn generate(&self, prompt: &str, temperature: f64) -> Result<String, CoreError>;
}
