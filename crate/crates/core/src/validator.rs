//! The four admission gates and the lexical support score.
//!
//! A cached answer is admitted only when every enabled gate passes:
//!
//! | gate | check |
//! |------|-------|
//! | G1 | `cosine(fresh query, cached query) >= tau_q` |
//! | G2 | `jaccard(fresh signature, cached signature) >= tau_e` |
//! | G3 | shared chunks carry identical versions |
//! | G4 | `support(cached answer, fresh chunks) >= tau_s` |
//!
//! Gates are evaluated in the order G1 to G4 and the decision stops at the
//! first failing enabled gate ([`GateOutcome::rejected_by`]). All four scores
//! are still computed and recorded, so logs can report what every gate would
//! have seen for the candidate, including under variants where it is off.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::caches::AnswerCacheEntry;
use crate::embed::{cosine, Embedding, ScoredChunk};
use crate::error::{Error, Result};
use crate::signature::{jaccard, versions_match, EvidenceSignature};
use crate::text::word_tokens;

const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Gate {
    #[serde(rename = "g1")]
    QuerySimilarity,
    #[serde(rename = "g2")]
    EvidenceOverlap,
    #[serde(rename = "g3")]
    VersionMatch,
    #[serde(rename = "g4")]
    Support,
}

impl Gate {
    pub const ORDER: [Gate; 4] = [
        Gate::QuerySimilarity,
        Gate::EvidenceOverlap,
        Gate::VersionMatch,
        Gate::Support,
    ];

    fn bit(self) -> u8 {
        1 << (self as u8)
    }

    pub fn label(self) -> &'static str {
        match self {
            Gate::QuerySimilarity => "g1",
            Gate::EvidenceOverlap => "g2",
            Gate::VersionMatch => "g3",
            Gate::Support => "g4",
        }
    }
}

impl fmt::Display for Gate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Gate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Gate::ORDER
            .into_iter()
            .find(|g| g.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown gate `{s}`")))
    }
}

/// A subset of the four gates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct GateSet(u8);

impl GateSet {
    pub const EMPTY: GateSet = GateSet(0);
    pub const ALL: GateSet = GateSet(0b1111);

    pub fn of(gates: &[Gate]) -> Self {
        GateSet(gates.iter().fold(0, |acc, g| acc | g.bit()))
    }

    pub fn contains(self, gate: Gate) -> bool {
        self.0 & gate.bit() != 0
    }

    pub fn with(self, gate: Gate) -> Self {
        GateSet(self.0 | gate.bit())
    }

    pub fn without(self, gate: Gate) -> Self {
        GateSet(self.0 & !gate.bit())
    }

    pub fn iter(self) -> impl Iterator<Item = Gate> {
        Gate::ORDER.into_iter().filter(move |g| self.contains(*g))
    }
}

impl Serialize for GateSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for GateSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let gates = Vec::<Gate>::deserialize(d)?;
        Ok(GateSet::of(&gates))
    }
}

/// Content-token extraction: lowercase alphanumeric runs minus stopwords and
/// tokens shorter than `min_token_len` characters.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentTokenizer {
    stopwords: Arc<BTreeSet<String>>,
    min_token_len: usize,
}

impl ContentTokenizer {
    pub fn new(stopwords: impl IntoIterator<Item = String>, min_token_len: usize) -> Self {
        Self {
            stopwords: Arc::new(stopwords.into_iter().map(|w| w.to_lowercase()).collect()),
            min_token_len,
        }
    }

    pub fn stopwords(&self) -> &BTreeSet<String> {
        &self.stopwords
    }

    pub fn min_token_len(&self) -> usize {
        self.min_token_len
    }

    pub fn tokens<'a>(&'a self, text: &'a str) -> impl Iterator<Item = String> + 'a {
        word_tokens(text).filter(move |t| t.chars().count() >= self.min_token_len && !self.stopwords.contains(t))
    }

    pub fn token_set(&self, text: &str) -> BTreeSet<String> {
        self.tokens(text).collect()
    }

    /// Content tokens counted with multiplicity.
    pub fn count(&self, text: &str) -> usize {
        self.tokens(text).count()
    }
}

impl Default for ContentTokenizer {
    fn default() -> Self {
        Self::new(default_stopwords(), 3)
    }
}

/// The shipped stopword list (`data/stopwords.txt`).
pub fn default_stopwords() -> Vec<String> {
    parse_stopwords(DEFAULT_STOPWORDS)
}

/// One word per line; `#` starts a comment line.
pub fn parse_stopwords(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateConfig {
    pub tau_q: f64,
    pub tau_e: f64,
    pub tau_s: f64,
    pub enabled: GateSet,
    pub tokenizer: ContentTokenizer,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            tau_q: 0.90,
            tau_e: 0.60,
            tau_s: 0.60,
            enabled: GateSet::ALL,
            tokenizer: ContentTokenizer::default(),
        }
    }
}

impl GateConfig {
    pub fn with_enabled(mut self, enabled: GateSet) -> Self {
        self.enabled = enabled;
        self
    }

    pub fn check(&self) -> Result<()> {
        for (name, v) in [("tau_q", self.tau_q), ("tau_e", self.tau_e), ("tau_s", self.tau_s)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Per-lookup gate trace for the single nearest cached entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateOutcome {
    /// `insert_seq` of the cached entry that was validated.
    pub candidate_seq: u64,
    pub candidate_query: String,
    pub g1_score: f64,
    pub g2_score: f64,
    /// Observed version agreement on shared chunks.
    pub g3_versions_match: bool,
    pub g4_score: f64,
    // Pass flags: a disabled gate passes vacuously.
    pub g1_pass: bool,
    pub g2_pass: bool,
    pub g3_pass: bool,
    pub g4_pass: bool,
    pub admitted: bool,
    /// First enabled gate (in G1..G4 order) that failed.
    pub rejected_by: Option<Gate>,
}

impl GateOutcome {
    pub fn passed(&self, gate: Gate) -> bool {
        match gate {
            Gate::QuerySimilarity => self.g1_pass,
            Gate::EvidenceOverlap => self.g2_pass,
            Gate::VersionMatch => self.g3_pass,
            Gate::Support => self.g4_pass,
        }
    }
}

/// Pluggable answer-support check. The lexical score is the default; a
/// judge-model scorer would implement the same trait.
pub trait SupportScorer {
    fn support(&self, answer: &str, chunks: &[ScoredChunk]) -> f64;
}

/// Lexical coverage of the answer's content tokens by the evidence.
#[derive(Debug, Clone, Default)]
pub struct LexicalSupport {
    pub tokenizer: ContentTokenizer,
}

impl SupportScorer for LexicalSupport {
    fn support(&self, answer: &str, chunks: &[ScoredChunk]) -> f64 {
        lexical_support(&self.tokenizer, answer, chunks)
    }
}

pub fn content_tokens(text: &str, cfg: &GateConfig) -> BTreeSet<String> {
    cfg.tokenizer.token_set(text)
}

/// `|tokens(answer) ∩ tokens(chunks)| / |tokens(answer)|`; an answer without
/// content tokens is vacuously supported (1.0).
pub fn support_score(answer: &str, chunks: &[ScoredChunk], cfg: &GateConfig) -> f64 {
    lexical_support(&cfg.tokenizer, answer, chunks)
}

fn lexical_support(tokenizer: &ContentTokenizer, answer: &str, chunks: &[ScoredChunk]) -> f64 {
    let answer_tokens = tokenizer.token_set(answer);
    if answer_tokens.is_empty() {
        return 1.0;
    }
    let evidence: BTreeSet<String> = chunks
        .iter()
        .flat_map(|sc| tokenizer.tokens(&sc.chunk.text))
        .collect();
    let covered = answer_tokens.iter().filter(|t| evidence.contains(*t)).count();
    covered as f64 / answer_tokens.len() as f64
}

/// Validates a cached entry against fresh evidence with the lexical scorer.
pub fn validate(
    cached: &AnswerCacheEntry,
    fresh_emb: &Embedding,
    fresh_sig: &EvidenceSignature,
    fresh_chunks: &[ScoredChunk],
    cfg: &GateConfig,
) -> Result<GateOutcome> {
    let scorer = LexicalSupport {
        tokenizer: cfg.tokenizer.clone(),
    };
    validate_with(&scorer, cached, fresh_emb, fresh_sig, fresh_chunks, cfg)
}

pub fn validate_with(
    scorer: &dyn SupportScorer,
    cached: &AnswerCacheEntry,
    fresh_emb: &Embedding,
    fresh_sig: &EvidenceSignature,
    fresh_chunks: &[ScoredChunk],
    cfg: &GateConfig,
) -> Result<GateOutcome> {
    let g1_score = cosine(fresh_emb, &cached.query_emb)?;
    let g2_score = jaccard(fresh_sig, &cached.signature);
    let g3_versions_match = versions_match(fresh_sig, &cached.signature);
    let g4_score = scorer.support(&cached.answer, fresh_chunks);

    let raw = |gate: Gate| match gate {
        Gate::QuerySimilarity => g1_score >= cfg.tau_q,
        Gate::EvidenceOverlap => g2_score >= cfg.tau_e,
        Gate::VersionMatch => g3_versions_match,
        Gate::Support => g4_score >= cfg.tau_s,
    };
    let pass = |gate: Gate| !cfg.enabled.contains(gate) || raw(gate);
    let rejected_by = Gate::ORDER.into_iter().find(|&g| !pass(g));

    Ok(GateOutcome {
        candidate_seq: cached.insert_seq,
        candidate_query: cached.query_text.clone(),
        g1_score,
        g2_score,
        g3_versions_match,
        g4_score,
        g1_pass: pass(Gate::QuerySimilarity),
        g2_pass: pass(Gate::EvidenceOverlap),
        g3_pass: pass(Gate::VersionMatch),
        g4_pass: pass(Gate::Support),
        admitted: rejected_by.is_none(),
        rejected_by,
    })
}
