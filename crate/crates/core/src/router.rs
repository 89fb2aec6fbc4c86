//! Per-query routing through the retrieval cache, index, answer cache and
//! generator.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::caches::{CacheSet, RetrievalCacheEntry};
use crate::corpus::CorpusSnapshot;
use crate::embed::{dedup_and_order, Embedder, Embedding, HashEmbedder, ScoredChunk, VectorIndex};
use crate::error::{Error, Result};
use crate::generate::{
    build_prompt, CompressionConfig, Compressor, ExtractiveGenerator, GenerationRequest, Generator,
    SentenceCompressor,
};
use crate::signature::{make_signature, EvidenceSignature};
use crate::validator::{validate, ContentTokenizer, Gate, GateConfig, GateOutcome, GateSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Path {
    Generate,
    RetrievalCache,
    AnswerCache,
}

impl Path {
    pub fn as_str(self) -> &'static str {
        match self {
            Path::Generate => "generate",
            Path::RetrievalCache => "retrieval_cache",
            Path::AnswerCache => "answer_cache",
        }
    }
}

/// Router configurations compared by the harness.
///
/// The five named variants differ only in their enabled gates; `NoCache`
/// bypasses both caches and always generates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "naive")]
    Naive,
    #[serde(rename = "no-version")]
    NoVersion,
    #[serde(rename = "no-evidence")]
    NoEvidence,
    #[serde(rename = "no-support")]
    NoSupport,
    #[serde(rename = "full")]
    Full,
    #[serde(rename = "no-cache")]
    NoCache,
}

impl Variant {
    /// The five gate-mask variants, in table order.
    pub const NAMED: [Variant; 5] = [
        Variant::Naive,
        Variant::NoVersion,
        Variant::NoEvidence,
        Variant::NoSupport,
        Variant::Full,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Naive => "naive",
            Variant::NoVersion => "no-version",
            Variant::NoEvidence => "no-evidence",
            Variant::NoSupport => "no-support",
            Variant::Full => "full",
            Variant::NoCache => "no-cache",
        }
    }

    /// Enabled gates, or `None` when caching is off.
    pub fn gates(self) -> Option<GateSet> {
        Some(match self {
            Variant::Naive => GateSet::of(&[Gate::QuerySimilarity]),
            Variant::NoVersion => GateSet::ALL.without(Gate::VersionMatch),
            Variant::NoEvidence => GateSet::ALL.without(Gate::EvidenceOverlap),
            Variant::NoSupport => GateSet::ALL.without(Gate::Support),
            Variant::Full => GateSet::ALL,
            Variant::NoCache => return None,
        })
    }

    /// The gate this ablation removes from the full set.
    pub fn removed_gate(self) -> Option<Gate> {
        match self {
            Variant::NoVersion => Some(Gate::VersionMatch),
            Variant::NoEvidence => Some(Gate::EvidenceOverlap),
            Variant::NoSupport => Some(Gate::Support),
            _ => None,
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Variant::NAMED.as_slice(), &[Variant::NoCache]]
            .concat()
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant `{s}`")))
    }
}

/// Wall-clock seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub ttft: f64,
    pub retrieval_latency: f64,
    pub end_to_end: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCounts {
    pub prompt_tokens: usize,
    pub completion_tokens: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteResult {
    pub answer: String,
    pub path: Path,
    pub gate_outcome: Option<GateOutcome>,
    pub signature: EvidenceSignature,
    /// Uncompressed, deduplicated evidence for this query.
    pub evidence: Vec<ScoredChunk>,
    pub timings: Timings,
    pub token_counts: TokenCounts,
}

#[derive(Debug, Clone)]
pub struct RouterSettings {
    pub k: usize,
    pub tau_ret: f64,
    /// `None` disables both caches: every query retrieves and generates.
    pub gates: Option<GateConfig>,
    pub compression: CompressionConfig,
    pub retrieval_capacity: Option<usize>,
    pub answer_capacity: Option<usize>,
}

impl Default for RouterSettings {
    fn default() -> Self {
        Self {
            k: 5,
            tau_ret: 0.97,
            gates: Some(GateConfig::default()),
            compression: CompressionConfig::default(),
            retrieval_capacity: None,
            answer_capacity: None,
        }
    }
}

/// Owns the caches and indexes for one replay. Not shared across traces.
pub struct Router {
    settings: RouterSettings,
    embedder: Arc<dyn Embedder>,
    tokenizer: ContentTokenizer,
    indexes: HashMap<String, VectorIndex>,
    caches: CacheSet,
    compressor: Box<dyn Compressor>,
    generator: Box<dyn Generator>,
    query_embeddings: u64,
}

impl Router {
    /// Extractive generator, default hash embedder and sentence compressor.
    pub fn new(settings: RouterSettings) -> Self {
        let tokenizer = settings
            .gates
            .as_ref()
            .map(|g| g.tokenizer.clone())
            .unwrap_or_default();
        let generator = Box::new(ExtractiveGenerator {
            tokenizer: tokenizer.clone(),
        });
        Self::with_parts(settings, Arc::new(HashEmbedder::default()), tokenizer, generator)
    }

    pub fn with_parts(
        settings: RouterSettings,
        embedder: Arc<dyn Embedder>,
        tokenizer: ContentTokenizer,
        generator: Box<dyn Generator>,
    ) -> Self {
        let compressor = Box::new(SentenceCompressor::new(
            settings.compression.clone(),
            tokenizer.clone(),
            Arc::clone(&embedder),
        ));
        let caches = CacheSet::new(settings.retrieval_capacity, settings.answer_capacity);
        Self {
            settings,
            embedder,
            tokenizer,
            indexes: HashMap::new(),
            caches,
            compressor,
            generator,
            query_embeddings: 0,
        }
    }

    pub fn with_compressor(mut self, compressor: Box<dyn Compressor>) -> Self {
        self.compressor = compressor;
        self
    }

    /// Indexes a snapshot so queries can be routed against it.
    pub fn add_snapshot(&mut self, snapshot: &CorpusSnapshot) -> Result<()> {
        if snapshot.is_empty() {
            return Err(Error::EmptySnapshot(snapshot.snapshot_id.clone()));
        }
        let index = VectorIndex::build(snapshot, self.embedder.as_ref());
        self.indexes.insert(snapshot.snapshot_id.clone(), index);
        Ok(())
    }

    pub fn settings(&self) -> &RouterSettings {
        &self.settings
    }

    pub fn caches(&self) -> &CacheSet {
        &self.caches
    }

    /// Query embeddings computed so far (one per routed query).
    pub fn query_embeddings(&self) -> u64 {
        self.query_embeddings
    }

    pub fn route(&mut self, query: &str, snapshot_id: &str) -> Result<RouteResult> {
        let start = Instant::now();
        let index = self
            .indexes
            .get(snapshot_id)
            .ok_or_else(|| Error::EmptySnapshot(snapshot_id.to_string()))?;

        let query_emb = self.embedder.embed(query);
        self.query_embeddings += 1;

        let caching = self.settings.gates.is_some();
        let retrieval_start = Instant::now();
        let cached = if caching {
            self.caches
                .retrieval
                .lookup(query, &query_emb, self.settings.tau_ret, snapshot_id)?
                .map(|e| e.chunks.clone())
        } else {
            None
        };
        let stage2_hit = cached.is_some();
        let evidence = match cached {
            Some(chunks) => chunks,
            None => {
                let chunks = dedup_and_order(index.top_k(&query_emb, self.settings.k)?);
                if caching {
                    self.caches.retrieval.insert(RetrievalCacheEntry {
                        query_text: query.to_string(),
                        query_emb: query_emb.clone(),
                        chunks: chunks.clone(),
                        snapshot_id: snapshot_id.to_string(),
                    });
                }
                chunks
            }
        };
        let retrieval_latency = retrieval_start.elapsed().as_secs_f64();
        if evidence.is_empty() {
            return Err(Error::EmptyRetrieval);
        }
        let signature = make_signature(&evidence);

        let mut gate_outcome = None;
        if let Some(gates) = &self.settings.gates {
            if let Some(entry) = self.caches.answers.nearest(&query_emb)? {
                let outcome = validate(entry, &query_emb, &signature, &evidence, gates)?;
                if outcome.admitted {
                    let answer = entry.answer.clone();
                    let elapsed = start.elapsed().as_secs_f64();
                    return Ok(RouteResult {
                        answer,
                        path: Path::AnswerCache,
                        gate_outcome: Some(outcome),
                        signature,
                        evidence,
                        timings: Timings {
                            ttft: elapsed,
                            retrieval_latency,
                            end_to_end: elapsed,
                        },
                        token_counts: TokenCounts::default(),
                    });
                }
                gate_outcome = Some(outcome);
            }
        }

        let (answer, prompt) = self.generate(query, &query_emb, &evidence)?;
        let ttft = start.elapsed().as_secs_f64();
        let token_counts = TokenCounts {
            prompt_tokens: self.tokenizer.count(&prompt),
            completion_tokens: self.tokenizer.count(&answer),
        };
        if caching {
            self.caches
                .answers
                .insert(query.to_string(), query_emb, answer.clone(), signature.clone());
        }
        Ok(RouteResult {
            answer,
            path: if stage2_hit { Path::RetrievalCache } else { Path::Generate },
            gate_outcome,
            signature,
            evidence,
            timings: Timings {
                ttft,
                retrieval_latency,
                end_to_end: start.elapsed().as_secs_f64(),
            },
            token_counts,
        })
    }

    fn generate(&self, query: &str, query_emb: &Embedding, evidence: &[ScoredChunk]) -> Result<(String, String)> {
        let compressed = self.compressor.compress(query, query_emb, evidence)?;
        let prompt = build_prompt(query, &compressed);
        let answer = self.generator.generate(&GenerationRequest {
            query,
            prompt: &prompt,
            chunks: &compressed,
        })?;
        Ok((answer, prompt))
    }
}
