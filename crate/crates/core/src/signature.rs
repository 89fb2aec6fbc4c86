//! Evidence signatures: the content-addressed, version-tagged record of the
//! chunks an answer was generated from.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::embed::ScoredChunk;

/// Positional identity of a chunk, stable across content mutations.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ChunkKey {
    pub doc_id: String,
    pub chunk_id: u32,
}

/// Five parallel components over one ordered chunk list.
///
/// `versions[i]` is the version of `chunk_ids[i]`; `chunk_hashes` holds one
/// digest per chunk (unique after deduplication).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvidenceSignature {
    pub doc_ids: Vec<String>,
    pub chunk_ids: Vec<ChunkKey>,
    pub chunk_hashes: Vec<String>,
    pub versions: Vec<u64>,
    pub scores: Vec<f64>,
}

impl EvidenceSignature {
    pub fn len(&self) -> usize {
        self.chunk_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunk_ids.is_empty()
    }

    pub fn hash_set(&self) -> BTreeSet<&str> {
        self.chunk_hashes.iter().map(String::as_str).collect()
    }

    pub fn version_of(&self, key: &ChunkKey) -> Option<u64> {
        self.chunk_ids
            .iter()
            .position(|k| k == key)
            .map(|i| self.versions[i])
    }
}

/// Projects an already deduplicated and ordered chunk list.
pub fn make_signature(chunks: &[ScoredChunk]) -> EvidenceSignature {
    let mut sig = EvidenceSignature::default();
    for sc in chunks {
        let c = &sc.chunk;
        sig.doc_ids.push(c.doc_id.clone());
        sig.chunk_ids.push(ChunkKey {
            doc_id: c.doc_id.clone(),
            chunk_id: c.chunk_id,
        });
        sig.chunk_hashes.push(c.hash.clone());
        sig.versions.push(c.version);
        sig.scores.push(sc.score);
    }
    sig
}

/// Jaccard over chunk hashes. Two empty signatures agree vacuously (1.0).
pub fn jaccard(a: &EvidenceSignature, b: &EvidenceSignature) -> f64 {
    let (ha, hb) = (a.hash_set(), b.hash_set());
    let union = ha.union(&hb).count();
    if union == 0 {
        return 1.0;
    }
    ha.intersection(&hb).count() as f64 / union as f64
}

/// True iff every `(doc_id, chunk_id)` present in both signatures carries the
/// same version. An empty intersection is a match.
pub fn versions_match(fresh: &EvidenceSignature, cached: &EvidenceSignature) -> bool {
    let cached_versions: HashMap<&ChunkKey, u64> =
        cached.chunk_ids.iter().zip(&cached.versions).map(|(k, &v)| (k, v)).collect();
    fresh
        .chunk_ids
        .iter()
        .zip(&fresh.versions)
        .all(|(k, v)| cached_versions.get(k).is_none_or(|cv| cv == v))
}
