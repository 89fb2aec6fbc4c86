//! Stage-2 retrieval cache and stage-3 answer cache.

use std::collections::HashMap;
use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::embed::{cosine, Embedding, ScoredChunk};
use crate::error::Result;
use crate::signature::EvidenceSignature;

static CONSTRUCTIONS: AtomicU64 = AtomicU64::new(0);

/// Number of [`CacheSet`]s constructed in this process.
pub fn cache_constructions() -> u64 {
    CONSTRUCTIONS.load(Ordering::SeqCst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalCacheEntry {
    pub query_text: String,
    pub query_emb: Embedding,
    pub chunks: Vec<ScoredChunk>,
    pub snapshot_id: String,
}

/// Retrieval results keyed by query, scoped to one corpus snapshot each.
///
/// Exact query-text matches win; otherwise the most similar entry from the
/// same snapshot is returned if its cosine reaches `tau_ret`. With a capacity
/// set, the least recently used entry is evicted on overflow.
#[derive(Debug, Default)]
pub struct RetrievalCache {
    entries: Vec<RetrievalCacheEntry>,
    last_used: Vec<u64>,
    by_key: HashMap<(String, String), usize>,
    clock: u64,
    capacity: Option<usize>,
}

impl RetrievalCache {
    pub fn new(capacity: Option<usize>) -> Self {
        Self {
            capacity,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[RetrievalCacheEntry] {
        &self.entries
    }

    pub fn lookup(
        &mut self,
        query_text: &str,
        query_emb: &Embedding,
        tau_ret: f64,
        snapshot_id: &str,
    ) -> Result<Option<&RetrievalCacheEntry>> {
        let key = (snapshot_id.to_string(), query_text.to_string());
        let hit = match self.by_key.get(&key) {
            Some(&i) => Some(i),
            None => {
                let mut best: Option<(usize, f64)> = None;
                for (i, e) in self.entries.iter().enumerate() {
                    if e.snapshot_id != snapshot_id {
                        continue;
                    }
                    let c = cosine(query_emb, &e.query_emb)?;
                    if best.is_none_or(|(_, b)| c > b) {
                        best = Some((i, c));
                    }
                }
                best.filter(|&(_, c)| c >= tau_ret).map(|(i, _)| i)
            }
        };
        Ok(hit.map(|i| {
            self.clock += 1;
            self.last_used[i] = self.clock;
            &self.entries[i]
        }))
    }

    /// Appends, or overwrites an entry with the same query text and snapshot.
    pub fn insert(&mut self, entry: RetrievalCacheEntry) {
        self.clock += 1;
        let key = (entry.snapshot_id.clone(), entry.query_text.clone());
        if let Some(&i) = self.by_key.get(&key) {
            self.entries[i] = entry;
            self.last_used[i] = self.clock;
            return;
        }
        if self.capacity.is_some_and(|cap| cap > 0 && self.entries.len() >= cap) {
            self.evict_lru();
        }
        self.by_key.insert(key, self.entries.len());
        self.entries.push(entry);
        self.last_used.push(self.clock);
    }

    fn evict_lru(&mut self) {
        let Some((victim, _)) = self.last_used.iter().enumerate().min_by_key(|(_, &t)| t) else {
            return;
        };
        self.entries.remove(victim);
        self.last_used.remove(victim);
        self.by_key = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| ((e.snapshot_id.clone(), e.query_text.clone()), i))
            .collect();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerCacheEntry {
    pub query_text: String,
    pub query_emb: Embedding,
    pub answer: String,
    pub signature: EvidenceSignature,
    pub insert_seq: u64,
}

/// Generated answers with their evidence signatures.
///
/// Lookup returns the single nearest entry with no threshold; admission is the
/// validator's job. With a capacity set, the oldest insertion is evicted.
#[derive(Debug, Default)]
pub struct AnswerCache {
    entries: Vec<AnswerCacheEntry>,
    next_seq: u64,
    capacity: Option<usize>,
}

impl AnswerCache {
    pub fn new(capacity: Option<usize>) -> Self {
        Self {
            capacity,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[AnswerCacheEntry] {
        &self.entries
    }

    /// Highest cosine to `query_emb`; ties go to the lowest `insert_seq`.
    pub fn nearest(&self, query_emb: &Embedding) -> Result<Option<&AnswerCacheEntry>> {
        let mut best: Option<(&AnswerCacheEntry, f64)> = None;
        for e in &self.entries {
            let c = cosine(query_emb, &e.query_emb)?;
            if best.is_none_or(|(_, b)| c > b) {
                best = Some((e, c));
            }
        }
        Ok(best.map(|(e, _)| e))
    }

    /// Appends with the next sequence number, which is returned.
    pub fn insert(
        &mut self,
        query_text: String,
        query_emb: Embedding,
        answer: String,
        signature: EvidenceSignature,
    ) -> u64 {
        if self.capacity.is_some_and(|cap| cap > 0 && self.entries.len() >= cap) {
            self.entries.remove(0);
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.entries.push(AnswerCacheEntry {
            query_text,
            query_emb,
            answer,
            signature,
            insert_seq: seq,
        });
        seq
    }
}

/// Both caches for one router. Every construction is counted.
#[derive(Debug)]
pub struct CacheSet {
    pub retrieval: RetrievalCache,
    pub answers: AnswerCache,
}

impl CacheSet {
    pub fn new(retrieval_capacity: Option<usize>, answer_capacity: Option<usize>) -> Self {
        CONSTRUCTIONS.fetch_add(1, Ordering::SeqCst);
        Self {
            retrieval: RetrievalCache::new(retrieval_capacity),
            answers: AnswerCache::new(answer_capacity),
        }
    }

    /// One JSON object per entry, tagged with `"cache": "retrieval" | "answer"`.
    pub fn dump_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        #[derive(Serialize)]
        struct Tagged<'a, T> {
            cache: &'static str,
            #[serde(flatten)]
            entry: &'a T,
        }
        for entry in self.retrieval.entries() {
            serde_json::to_writer(&mut out, &Tagged { cache: "retrieval", entry })?;
            out.write_all(b"\n").map_err(|e| crate::error::Error::io("<cache dump>", e))?;
        }
        for entry in self.answers.entries() {
            serde_json::to_writer(&mut out, &Tagged { cache: "answer", entry })?;
            out.write_all(b"\n").map_err(|e| crate::error::Error::io("<cache dump>", e))?;
        }
        Ok(())
    }
}
