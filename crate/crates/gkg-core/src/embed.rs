//! Text encoders and the exact-scan vector index.
//!
//! Retrieval quality and every downstream reward depend on the geometry of
//! these vectors, so the contract is strict: every encoder output and every
//! index row is unit-norm, similarity is cosine, and ranking ties break by
//! ascending row id so that results are reproducible across runs.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::rng::splitmix64;
use crate::CoreError;

/// Tolerance for the unit-norm invariant on f32 rows.
pub const NORM_TOL: f64 = 1e-4;

/// Maps text to a unit-norm embedding of fixed dimension.
pub trait TextEncoder {
    /// Embedding dimension; at least 8.
    fn dim(&self) -> usize;
    /// Stable identifier used to key embedding caches.
    fn id(&self) -> String;
    /// Encode one text. Must be deterministic and unit-norm.
    fn encode(&self, text: &str) -> Vec<f32>;
}

impl<E: TextEncoder + ?Sized> TextEncoder for &E {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn id(&self) -> String {
        (**self).id()
    }
    fn encode(&self, text: &str) -> Vec<f32> {
        (**self).encode(text)
    }
}

/// Signed feature-hash encoder over distinct lowercased alphanumeric tokens.
///
/// Each distinct token type hashes to one bucket with sign +-1 (repeats of a
/// token count once), and the bucket sums are L2-normalized. Presence rather
/// than frequency keeps long texts from concentrating their mass in a few
/// heavy buckets, where a single colliding token from another text would
/// otherwise dominate the cosine; with presence the damage of any one
/// collision is bounded by one unit. Texts without tokens (and the
/// measure-zero case where all token contributions cancel) map to a fixed
/// reserved unit vector so the unit-norm invariant holds unconditionally.
#[derive(Debug, Clone)]
pub struct HashEncoder {
    dim: usize,
    seed: u64,
}

impl HashEncoder {
    pub fn new(dim: usize, seed: u64) -> Result<Self, CoreError> {
        if dim < 8 {
            return Err(CoreError::BadParam {
                name: "dim",
                why: "hash encoder needs dim >= 8",
            });
        }
        Ok(Self { dim, seed })
    }

    /// The vector assigned to token-free text: e0.
    fn reserved(&self) -> Vec<f32> {
        let mut v = vec![0.0f32; self.dim];
        v[0] = 1.0;
        v
    }

    fn token_hash(&self, token: &str) -> u64 {
        // FNV-1a over case-folded bytes, then a SplitMix finalizer keyed by
        // the seed.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in token.bytes() {
            h ^= b.to_ascii_lowercase() as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        splitmix64(h ^ self.seed)
    }
}

impl TextEncoder for HashEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn id(&self) -> String {
        format!("hash-v2-d{}-s{}", self.dim, self.seed)
    }

    fn encode(&self, text: &str) -> Vec<f32> {
        // Distinct token types only. Deduplication runs on the 64-bit token
        // hash, so two different tokens merge only on a full hash collision.
        let mut hashes: Vec<u64> = tokens(text).map(|t| self.token_hash(t)).collect();
        if hashes.is_empty() {
            return self.reserved();
        }
        hashes.sort_unstable();
        hashes.dedup();
        let mut acc = vec![0.0f32; self.dim];
        for h in hashes {
            let bucket = ((h >> 1) % self.dim as u64) as usize;
            let sign = if h & 1 == 1 { 1.0f32 } else { -1.0f32 };
            acc[bucket] += sign;
        }
        let norm: f64 = acc.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return self.reserved();
        }
        for x in acc.iter_mut() {
            *x = (*x as f64 / norm) as f32;
        }
        acc
    }
}

/// Iterator over lowercased alphanumeric token slices of `text`.
///
/// Tokens are maximal ASCII-alphanumeric runs; other bytes separate. Uppercase
/// ASCII folds to lowercase via the returned owned strings.
pub fn tokens(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !c.is_ascii_alphanumeric()).filter(|t| !t.is_empty())
}

/// Triple verbalization used for embedding: the raw space-joined
/// concatenation of head, relation, and tail descriptions.
pub fn triple_text(head: &str, rel: &str, tail: &str) -> String {
    format!("{head} {rel} {tail}")
}

/// Encode a triple as one text in head-relation-tail order.
pub fn encode_triple<E: TextEncoder + ?Sized>(enc: &E, head: &str, rel: &str, tail: &str) -> Vec<f32> {
    enc.encode(&triple_text(head, rel, tail))
}

/// Cosine similarity with f64 accumulation.
///
/// Inputs are expected to be unit-norm; the denominator is still computed so
/// near-unit rows give exact cosine rather than a drifting dot product.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for i in 0..a.len().min(b.len()) {
        let x = a[i] as f64;
        let y = b[i] as f64;
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (num_traits::Float::sqrt(na) * num_traits::Float::sqrt(nb))
}

/// What an index's rows describe; persisted in the binary header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexKind {
    Entity,
    Relation,
    Triple,
}

impl IndexKind {
    pub fn tag(self) -> u8 {
        match self {
            IndexKind::Entity => 0,
            IndexKind::Relation => 1,
            IndexKind::Triple => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(IndexKind::Entity),
            1 => Some(IndexKind::Relation),
            2 => Some(IndexKind::Triple),
            _ => None,
        }
    }
}

/// Dense row-major store of unit-norm f32 vectors with exact top-m scan.
#[derive(Debug, Clone)]
pub struct VectorIndex {
    kind: IndexKind,
    dim: usize,
    rows: usize,
    data: Vec<f32>,
}

impl VectorIndex {
    /// Build from per-row vectors, validating dimension and unit norm.
    pub fn build(kind: IndexKind, dim: usize, rows: Vec<Vec<f32>>) -> Result<Self, CoreError> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(CoreError::DimMismatch { expected: dim, got: row.len() });
            }
            let norm: f64 = row.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>();
            if (num_traits::Float::sqrt(norm) - 1.0).abs() > NORM_TOL {
                return Err(CoreError::NotUnitNorm { row: i });
            }
            data.extend_from_slice(row);
        }
        Ok(Self { kind, dim, rows: rows.len(), data })
    }

    /// Construct from a raw row-major buffer (used by persistence).
    pub fn from_raw(kind: IndexKind, dim: usize, rows: usize, data: Vec<f32>) -> Result<Self, CoreError> {
        if data.len() != dim * rows {
            return Err(CoreError::DimMismatch { expected: dim * rows, got: data.len() });
        }
        for i in 0..rows {
            let row = &data[i * dim..(i + 1) * dim];
            let norm: f64 = row.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>();
            if (num_traits::Float::sqrt(norm) - 1.0).abs() > NORM_TOL {
                return Err(CoreError::NotUnitNorm { row: i });
            }
        }
        Ok(Self { kind, dim, rows, data })
    }

    pub fn kind(&self) -> IndexKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn raw(&self) -> &[f32] {
        &self.data
    }

    /// Exact top-m rows by cosine similarity to `query`.
    ///
    /// Scans every row; ties break by ascending row id, which also gives the
    /// prefix property top_m(m) == top_m(m+1)[..m]. Returns fewer than `m`
    /// entries only when the index has fewer rows. An empty index is an error.
    pub fn top_m(&self, query: &[f32], m: usize) -> Result<Vec<(usize, f64)>, CoreError> {
        if self.rows == 0 {
            return Err(CoreError::Empty("vector index"));
        }
        if query.len() != self.dim {
            return Err(CoreError::DimMismatch { expected: self.dim, got: query.len() });
        }
        if m == 0 {
            return Ok(Vec::new());
        }
        let mut scored: Vec<(usize, f64)> = (0..self.rows)
            .map(|i| (i, cosine(query, self.row(i))))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(m);
        Ok(scored)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn enc() -> HashEncoder {
        HashEncoder::new(64, 11).unwrap()
    }

    #[test]
    fn dim_floor_enforced() {
        assert!(HashEncoder::new(4, 0).is_err());
        assert!(HashEncoder::new(8, 0).is_ok());
    }

    #[test]
    fn encoder_is_deterministic_and_unit_norm() {
        let e = enc();
        let a = e.encode("The Terminator 1984 action");
        let b = e.encode("The Terminator 1984 action");
        assert_eq!(a, b);
        let norm: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6, "norm {norm}");
    }

    #[test]
    fn empty_text_gets_reserved_vector() {
        let e = enc();
        let v = e.encode("");
        let w = e.encode(" \t@@ ");
        assert_eq!(v, w);
        assert_eq!(v[0], 1.0);
        assert!(v[1..].iter().all(|x| *x == 0.0));
    }

    #[test]
    fn case_folding_matches() {
        let e = enc();
        assert_eq!(e.encode("Alien VS Predator"), e.encode("alien vs predator"));
    }

    #[test]
    fn repeated_tokens_count_once() {
        let e = enc();
        assert_eq!(e.encode("alpha alpha alpha beta"), e.encode("beta alpha"));
        assert_ne!(e.encode("alpha alpha"), e.encode("alpha beta"));
        // Presence keeps a shared rare token's contribution independent of
        // how often the common token repeats.
        let q = e.encode("common common common rare");
        let a = e.encode("rare other");
        let b = e.encode("common other");
        assert!(cosine(&q, &a) > 0.0);
        assert!((cosine(&q, &a) - cosine(&q, &b)).abs() < 1e-9);
    }

    #[test]
    fn triple_text_is_space_joined_in_order() {
        assert_eq!(triple_text("a b", "r", "c"), "a b r c");
        let e = enc();
        let t = encode_triple(&e, "alpha", "rel", "beta");
        assert_eq!(t, e.encode("alpha rel beta"));
        // Order matters for the bag only via identical tokens; swapped
        // head/tail with distinct tokens still encodes the same bag, so use
        // the joined-text equality above as the contract.
    }

    #[test]
    fn cosine_identity_and_antipodal() {
        let e = enc();
        let v = e.encode("some text here");
        assert!((cosine(&v, &v) - 1.0).abs() <= 1e-6);
        let neg: Vec<f32> = v.iter().map(|x| -x).collect();
        assert!((cosine(&v, &neg) + 1.0).abs() <= 1e-6);
    }

    #[test]
    fn cosine_matches_high_precision_reference() {
        // f64 reference on the same f32 inputs, Kahan-compensated.
        let e = enc();
        let mut seed = 1u64;
        for _ in 0..200 {
            seed = splitmix64(seed);
            let a = e.encode(&format!("text {seed}"));
            seed = splitmix64(seed);
            let b = e.encode(&format!("other {seed}"));
            let mut dot = 0.0f64;
            let mut c = 0.0f64;
            for i in 0..a.len() {
                let term = a[i] as f64 * b[i] as f64 - c;
                let t = dot + term;
                c = (t - dot) - term;
                dot = t;
            }
            let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
            let reference = dot / (na * nb);
            assert!((cosine(&a, &b) - reference).abs() <= 1e-6);
        }
    }

    #[test]
    fn unrelated_texts_have_small_mean_cosine() {
        let e = enc();
        let mut seed = 9u64;
        let mut acc = 0.0;
        let n = 1000;
        for i in 0..n {
            seed = splitmix64(seed);
            let a = e.encode(&format!("aa{} bb{} cc{}", seed & 0xffff, seed >> 16 & 0xffff, i));
            seed = splitmix64(seed);
            let b = e.encode(&format!("dd{} ee{} ff{}", seed & 0xffff, seed >> 16 & 0xffff, i));
            acc += cosine(&a, &b).abs();
        }
        let mean = acc / n as f64;
        assert!(mean < 0.2, "mean |cos| = {mean}");
    }

    #[test]
    fn index_rejects_empty_scan_and_bad_rows() {
        let idx = VectorIndex::build(IndexKind::Entity, 8, vec![]).unwrap();
        assert!(matches!(idx.top_m(&[0.0; 8], 1), Err(CoreError::Empty(_))));
        let bad = VectorIndex::build(IndexKind::Entity, 8, vec![vec![0.5; 8]]);
        assert!(matches!(bad, Err(CoreError::NotUnitNorm { row: 0 })));
    }

    #[test]
    fn top_m_exact_row_ranks_first() {
        let e = enc();
        let rows: Vec<Vec<f32>> = (0..50).map(|i| e.encode(&format!("row number {i}"))).collect();
        let idx = VectorIndex::build(IndexKind::Triple, 64, rows.clone()).unwrap();
        let got = idx.top_m(&rows[17], 1).unwrap();
        assert_eq!(got[0].0, 17);
        assert!((got[0].1 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn top_m_matches_brute_force_oracle() {
        let e = enc();
        let rows: Vec<Vec<f32>> = (0..500).map(|i| e.encode(&format!("entry {} tag {}", i, i % 7))).collect();
        let idx = VectorIndex::build(IndexKind::Triple, 64, rows.clone()).unwrap();
        let q = e.encode("entry 42 tag 0");
        for m in [1usize, 3, 15] {
            // Independent oracle: score every row, stable sort, cut.
            let mut oracle: Vec<(usize, f64)> = rows
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let dot: f64 = r.iter().zip(q.iter()).map(|(x, y)| *x as f64 * *y as f64).sum();
                    let nr: f64 = r.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
                    let nq: f64 = q.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
                    (i, dot / (nr * nq))
                })
                .collect();
            oracle.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            oracle.truncate(m);
            let got = idx.top_m(&q, m).unwrap();
            assert_eq!(got, oracle, "m={m}");
        }
    }

    #[test]
    fn top_m_prefix_property_and_monotone_scores() {
        let e = enc();
        let rows: Vec<Vec<f32>> = (0..120).map(|i| e.encode(&format!("word{} word{}", i, i / 3))).collect();
        let idx = VectorIndex::build(IndexKind::Entity, 64, rows).unwrap();
        let q = e.encode("word5 word1");
        let big = idx.top_m(&q, 30).unwrap();
        for m in 1..30 {
            let small = idx.top_m(&q, m).unwrap();
            assert_eq!(small[..], big[..m]);
        }
        for w in big.windows(2) {
            assert!(w[0].1 >= w[1].1);
        }
        // m beyond the row count returns every row.
        let all = idx.top_m(&q, 1000).unwrap();
        assert_eq!(all.len(), 120);
    }
}
