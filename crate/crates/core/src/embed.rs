//! Deterministic feature-hash embedder and exact brute-force top-k retrieval.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Chunk, CorpusSnapshot};
use crate::error::{Error, Result};
use crate::text::{fnv1a64, word_tokens};

pub const DEFAULT_DIM: usize = 256;

/// An L2-normalized embedding, or the zero vector for token-free text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub values: Vec<f64>,
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Scales to unit length; the zero vector is returned unchanged.
    pub fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            self.values.iter_mut().for_each(|v| *v /= n);
        }
        self
    }
}

/// Text encoder used both for retrieval and for the query-similarity gate.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Embedding;
}

/// Signed feature hashing over lowercased alphanumeric tokens.
///
/// Each token's FNV-1a hash picks a bucket (`hash % dim`) and a sign (top bit).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIM)
    }
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Embedding {
        let mut values = vec![0.0; self.dim];
        for token in word_tokens(text) {
            let h = fnv1a64(token.as_bytes());
            let bucket = (h % self.dim as u64) as usize;
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            values[bucket] += sign;
        }
        Embedding::new(values).normalized()
    }
}

/// Embeds with the default 256-dimensional [`HashEmbedder`].
pub fn embed_text(text: &str) -> Embedding {
    HashEmbedder::default().embed(text)
}

/// Dot product of two pre-normalized vectors, clamped to `[-1, 1]`.
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok(dot.clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredChunk {
    pub chunk: Chunk,
    pub score: f64,
}

/// Exact retrieval over one snapshot with precomputed chunk embeddings.
pub struct VectorIndex {
    snapshot_id: String,
    chunks: Vec<Chunk>,
    embeddings: Vec<Embedding>,
}

impl VectorIndex {
    pub fn build(snapshot: &CorpusSnapshot, embedder: &dyn Embedder) -> Self {
        Self::from_chunks(snapshot.snapshot_id.clone(), snapshot.chunks.clone(), embedder)
    }

    pub fn from_chunks(snapshot_id: String, chunks: Vec<Chunk>, embedder: &dyn Embedder) -> Self {
        let embeddings = chunks.iter().map(|c| embedder.embed(&c.text)).collect();
        Self {
            snapshot_id,
            chunks,
            embeddings,
        }
    }

    pub fn snapshot_id(&self) -> &str {
        &self.snapshot_id
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    /// The `k` highest-cosine chunks, descending; ties by `(doc_id, chunk_id)`.
    pub fn top_k(&self, query: &Embedding, k: usize) -> Result<Vec<ScoredChunk>> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if self.chunks.is_empty() {
            return Err(Error::EmptySnapshot(self.snapshot_id.clone()));
        }
        let mut scored = self
            .chunks
            .iter()
            .zip(&self.embeddings)
            .map(|(chunk, emb)| Ok((cosine(query, emb)?, chunk)))
            .collect::<Result<Vec<_>>>()?;
        let by_rank = |a: &(f64, &Chunk), b: &(f64, &Chunk)| {
            b.0.total_cmp(&a.0).then_with(|| a.1.key().cmp(&b.1.key()))
        };
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, by_rank);
            scored.truncate(k);
        }
        scored.sort_by(by_rank);
        Ok(scored
            .into_iter()
            .map(|(score, chunk)| ScoredChunk {
                chunk: chunk.clone(),
                score,
            })
            .collect())
    }
}

/// Keeps the best-scoring chunk per content hash and orders the survivors by
/// `(doc_id, chunk_id)`, so identical evidence sets lay out identically.
pub fn dedup_and_order(chunks: Vec<ScoredChunk>) -> Vec<ScoredChunk> {
    let mut best: BTreeMap<String, ScoredChunk> = BTreeMap::new();
    for sc in chunks {
        match best.get(&sc.chunk.hash) {
            Some(kept) if !preferred(&sc, kept) => {}
            _ => {
                best.insert(sc.chunk.hash.clone(), sc);
            }
        }
    }
    let mut out: Vec<_> = best.into_values().collect();
    out.sort_by(|a, b| a.chunk.key().cmp(&b.chunk.key()));
    out
}

// Higher score wins; equal scores fall back to the smaller key so the result
// does not depend on input order.
fn preferred(candidate: &ScoredChunk, kept: &ScoredChunk) -> bool {
    match candidate.score.total_cmp(&kept.score) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => candidate.chunk.key() < kept.chunk.key(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn chunk(doc: &str, id: u32, text: &str) -> Chunk {
        Chunk::new(doc, id, 0, text)
    }

    #[test]
    fn embedding_is_deterministic_and_unit() {
        let a = embed_text("The quick brown fox");
        assert_eq!(a, embed_text("The quick brown fox"));
        assert!((a.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn empty_text_is_zero_vector() {
        let z = embed_text(" ,.; ");
        assert!(z.is_zero());
        assert_eq!(cosine(&z, &embed_text("alpha")).unwrap(), 0.0);
    }

    #[test]
    fn bag_of_words_is_order_invariant() {
        let c = cosine(&embed_text("alpha beta"), &embed_text("beta alpha")).unwrap();
        assert!((c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_of_basis_vectors() {
        let mut e1 = Embedding::zeros(4);
        e1.values[0] = 1.0;
        let mut e2 = Embedding::zeros(4);
        e2.values[1] = 1.0;
        assert_eq!(cosine(&e1, &e2).unwrap(), 0.0);
        assert_eq!(cosine(&e1, &e1).unwrap(), 1.0);
    }

    #[test]
    fn cosine_rejects_dimension_mismatch() {
        assert!(matches!(
            cosine(&Embedding::zeros(3), &Embedding::zeros(4)),
            Err(Error::DimensionMismatch { left: 3, right: 4 })
        ));
    }

    #[test]
    fn top_k_returns_everything_when_k_exceeds_corpus() {
        let chunks = vec![chunk("b", 0, "beta gamma"), chunk("a", 0, "alpha beta"), chunk("c", 0, "delta")];
        let index = VectorIndex::from_chunks("s".into(), chunks, &HashEmbedder::default());
        let hits = index.top_k(&embed_text("alpha beta"), 10).unwrap();
        assert_eq!(hits.len(), 3);
        assert_eq!(hits[0].chunk.doc_id, "a");
        assert!(hits.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn top_k_ties_break_by_key() {
        let chunks = vec![chunk("b", 1, "same text"), chunk("a", 2, "same text"), chunk("a", 1, "same text")];
        let index = VectorIndex::from_chunks("s".into(), chunks, &HashEmbedder::default());
        let hits = index.top_k(&embed_text("same text"), 2).unwrap();
        let keys: Vec<_> = hits.iter().map(|h| (h.chunk.doc_id.clone(), h.chunk.chunk_id)).collect();
        assert_eq!(keys, vec![("a".to_string(), 1), ("a".to_string(), 2)]);
    }

    #[test]
    fn top_k_errors() {
        let empty = VectorIndex::from_chunks("s".into(), vec![], &HashEmbedder::default());
        assert!(matches!(empty.top_k(&embed_text("x"), 1), Err(Error::EmptySnapshot(_))));
        let one = VectorIndex::from_chunks("s".into(), vec![chunk("a", 0, "x")], &HashEmbedder::default());
        assert!(one.top_k(&embed_text("x"), 0).is_err());
    }

    #[test]
    fn dedup_collapses_duplicate_hashes() {
        let input = vec![
            ScoredChunk { chunk: chunk("b", 0, "same"), score: 0.2 },
            ScoredChunk { chunk: chunk("a", 3, "same"), score: 0.9 },
            ScoredChunk { chunk: chunk("a", 1, "other"), score: 0.5 },
        ];
        let out = dedup_and_order(input);
        assert_eq!(out.len(), 2);
        assert_eq!((out[0].chunk.doc_id.as_str(), out[0].chunk.chunk_id), ("a", 1));
        assert_eq!((out[1].chunk.doc_id.as_str(), out[1].chunk.chunk_id), ("a", 3));
        assert_eq!(dedup_and_order(out.clone()), out);
    }

    fn arb_scored() -> impl Strategy<Value = Vec<ScoredChunk>> {
        proptest::collection::vec(("[a-c]", 0u32..4, "[xyz]{1,2}", 0u8..4), 0..12).prop_map(|v| {
            v.into_iter()
                .map(|(d, id, t, s)| ScoredChunk {
                    chunk: chunk(&d, id, &t),
                    score: f64::from(s) / 4.0,
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn dedup_is_permutation_invariant(input in arb_scored(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = input.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(dedup_and_order(shuffled), dedup_and_order(input));
        }
    }
}
