//! Seeded synthesis of the six traffic regimes from a QA seed set.
//!
//! Every synthesizer is a pure function of its inputs: the same QA set,
//! config and base snapshot always produce the same trace.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{read_jsonl_numbered, CorpusSnapshot};
use crate::error::{Error, Result};
use crate::validator::ContentTokenizer;

const DEFAULT_PARAPHRASE_TABLE: &str = include_str!("../data/paraphrase.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAItem {
    pub question: String,
    pub gold_answer: String,
    pub gold_doc_ids: BTreeSet<String>,
}

/// Reads `{"question", "gold_answer", "gold_doc_ids"}` objects, one per line.
pub fn load_qa_jsonl(path: impl AsRef<Path>) -> Result<Vec<QAItem>> {
    let path = path.as_ref();
    read_jsonl_numbered::<QAItem>(path)?
        .into_iter()
        .map(|(line, item)| {
            if item.gold_doc_ids.is_empty() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: "gold_doc_ids must not be empty".into(),
                });
            }
            Ok(item)
        })
        .collect()
}

pub fn write_qa_jsonl<W: Write>(items: &[QAItem], mut out: W) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n").map_err(|e| Error::io("<qa>", e))?;
    }
    Ok(())
}

/// Checks that every gold document exists in `base`.
pub fn check_qa(qa: &[QAItem], base: &CorpusSnapshot) -> Result<()> {
    for item in qa {
        if item.gold_doc_ids.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "question `{}` has no gold documents",
                item.question
            )));
        }
        for id in &item.gold_doc_ids {
            if base.document(id).is_none() {
                return Err(Error::UnknownDocument(id.clone()));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    ExactRepeat,
    Paraphrase,
    NearMiss,
    DocumentDrift,
    LongSharedDoc,
    BoundedKbCag,
}

impl Regime {
    pub const ALL: [Regime; 6] = [
        Regime::ExactRepeat,
        Regime::Paraphrase,
        Regime::NearMiss,
        Regime::DocumentDrift,
        Regime::LongSharedDoc,
        Regime::BoundedKbCag,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::ExactRepeat => "exact_repeat",
            Regime::Paraphrase => "paraphrase",
            Regime::NearMiss => "near_miss",
            Regime::DocumentDrift => "document_drift",
            Regime::LongSharedDoc => "long_shared_doc",
            Regime::BoundedKbCag => "bounded_kb_cag",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.replace('-', "_");
        Regime::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown regime `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Prime,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceQuery {
    pub seq: u64,
    pub query: String,
    pub gold_answer: String,
    pub gold_doc_ids: BTreeSet<String>,
    pub regime: Regime,
    pub snapshot_id: String,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeConfig {
    pub name: Regime,
    pub n_queries: usize,
    pub seed: u64,
    pub prime_fraction: f64,
}

impl RegimeConfig {
    pub fn new(name: Regime) -> Self {
        Self {
            name,
            n_queries: 200,
            seed: 7,
            prime_fraction: 0.5,
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.n_queries < 2 {
            return Err(Error::Config(format!("n_queries = {} must be at least 2", self.n_queries)));
        }
        if !(self.prime_fraction > 0.0 && self.prime_fraction < 1.0) {
            return Err(Error::Config(format!(
                "prime_fraction = {} must lie strictly between 0 and 1",
                self.prime_fraction
            )));
        }
        Ok(())
    }

    fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    /// `⌈prime_fraction · n⌉`, capped so at least one replay remains and at
    /// most `available` distinct items are primed.
    pub fn prime_count(&self, available: usize) -> usize {
        let wanted = (self.prime_fraction * self.n_queries as f64).ceil() as usize;
        wanted.min(self.n_queries - 1).min(available).max(1)
    }
}

/// A synthesized trace plus what the harness needs to replay it.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub regime: Regime,
    pub queries: Vec<TraceQuery>,
    /// The post-drift snapshot referenced by drift replays.
    pub mutated: Option<CorpusSnapshot>,
    /// Retrieve the whole knowledge base on every query.
    pub whole_kb: bool,
}

impl Trace {
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for q in &self.queries {
            serde_json::to_writer(&mut out, q)?;
            out.write_all(b"\n").map_err(|e| Error::io("<trace>", e))?;
        }
        Ok(())
    }
}

/// Template-plus-synonym surface rewrite used by the paraphrase regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParaphraseTable {
    pub version: u32,
    pub frames: Vec<String>,
    pub synonyms: Vec<(String, String)>,
}

impl Default for ParaphraseTable {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_PARAPHRASE_TABLE).expect("shipped paraphrase table parses")
    }
}

impl ParaphraseTable {
    /// Prepends frame `frame % frames.len()` and swaps the first word found in
    /// the synonym table. The result always differs from `question`.
    pub fn rewrite(&self, question: &str, frame: usize) -> String {
        let body = self.substitute(question);
        match self.frames.get(frame % self.frames.len().max(1)) {
            Some(f) => format!("{f} {body}"),
            None => format!("{body} "),
        }
    }

    fn substitute(&self, question: &str) -> String {
        let mut out = String::with_capacity(question.len());
        let mut replaced = false;
        let mut rest = question;
        while !rest.is_empty() {
            let word_len = rest
                .char_indices()
                .find(|(_, c)| !c.is_alphanumeric())
                .map_or(rest.len(), |(i, _)| i);
            if word_len == 0 {
                let c = rest.chars().next().unwrap();
                out.push(c);
                rest = &rest[c.len_utf8()..];
                continue;
            }
            let word = &rest[..word_len];
            let swap = (!replaced)
                .then(|| self.synonyms.iter().find(|(from, _)| from.eq_ignore_ascii_case(word)))
                .flatten();
            match swap {
                Some((_, to)) => {
                    replaced = true;
                    out.push_str(&match_case(word, to));
                }
                None => out.push_str(word),
            }
            rest = &rest[word_len..];
        }
        out
    }
}

fn match_case(original: &str, replacement: &str) -> String {
    if original.chars().next().is_some_and(char::is_uppercase) {
        let mut cs = replacement.chars();
        cs.next()
            .map(|c| c.to_uppercase().chain(cs).collect())
            .unwrap_or_default()
    } else {
        replacement.to_string()
    }
}

fn query(seq: usize, item: &QAItem, regime: Regime, snapshot_id: &str, origin: Origin) -> TraceQuery {
    TraceQuery {
        seq: seq as u64,
        query: item.question.clone(),
        gold_answer: item.gold_answer.clone(),
        gold_doc_ids: item.gold_doc_ids.clone(),
        regime,
        snapshot_id: snapshot_id.to_string(),
        origin,
    }
}

fn need_two(qa: &[QAItem]) -> Result<()> {
    if qa.len() < 2 {
        return Err(Error::InvalidArgument("at least two QA items are required".into()));
    }
    Ok(())
}

/// Primes on distinct shuffled items, then replays uniformly sampled primes.
/// Returns the prime item indices and, per replay, the chosen index.
fn prime_and_sample(qa: &[QAItem], cfg: &RegimeConfig, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..qa.len()).collect();
    order.shuffle(rng);
    order.truncate(cfg.prime_count(qa.len()));
    let replays = (order.len()..cfg.n_queries)
        .map(|_| order[rng.random_range(0..order.len())])
        .collect();
    (order, replays)
}

fn repeat_trace(qa: &[QAItem], cfg: &RegimeConfig, regime: Regime, snapshot_id: &str) -> Result<Vec<TraceQuery>> {
    cfg.check()?;
    need_two(qa)?;
    let mut rng = cfg.rng();
    let (primes, replays) = prime_and_sample(qa, cfg, &mut rng);
    let mut out: Vec<TraceQuery> = primes
        .iter()
        .enumerate()
        .map(|(seq, &i)| query(seq, &qa[i], regime, snapshot_id, Origin::Prime))
        .collect();
    for &i in &replays {
        out.push(query(out.len(), &qa[i], regime, snapshot_id, Origin::Replay));
    }
    Ok(out)
}

pub fn synth_exact_repeat(qa: &[QAItem], cfg: &RegimeConfig, snapshot_id: &str) -> Result<Vec<TraceQuery>> {
    repeat_trace(qa, cfg, Regime::ExactRepeat, snapshot_id)
}

/// Same text as [`synth_exact_repeat`] under the same seed.
pub fn synth_bounded_kb_cag(qa: &[QAItem], cfg: &RegimeConfig, snapshot_id: &str) -> Result<Vec<TraceQuery>> {
    repeat_trace(qa, cfg, Regime::BoundedKbCag, snapshot_id)
}

pub fn synth_paraphrase(
    qa: &[QAItem],
    cfg: &RegimeConfig,
    snapshot_id: &str,
    table: &ParaphraseTable,
) -> Result<Vec<TraceQuery>> {
    cfg.check()?;
    need_two(qa)?;
    let mut rng = cfg.rng();
    let (primes, replays) = prime_and_sample(qa, cfg, &mut rng);
    let offset = rng.random_range(0..table.frames.len().max(1));
    let mut out: Vec<TraceQuery> = primes
        .iter()
        .enumerate()
        .map(|(seq, &i)| query(seq, &qa[i], Regime::Paraphrase, snapshot_id, Origin::Prime))
        .collect();
    for (r, &i) in replays.iter().enumerate() {
        let mut q = query(out.len(), &qa[i], Regime::Paraphrase, snapshot_id, Origin::Replay);
        q.query = table.rewrite(&qa[i].question, offset + r);
        out.push(q);
    }
    Ok(out)
}

/// Pairs each primed item with an unprimed, lexically closest item whose gold
/// documents are disjoint, and replays the partner's question.
pub fn synth_near_miss(
    qa: &[QAItem],
    cfg: &RegimeConfig,
    snapshot_id: &str,
    tokenizer: &ContentTokenizer,
) -> Result<Vec<TraceQuery>> {
    cfg.check()?;
    need_two(qa)?;
    let mut rng = cfg.rng();
    let mut order: Vec<usize> = (0..qa.len()).collect();
    order.shuffle(&mut rng);
    let n_primes = cfg.prime_count(qa.len() / 2);
    let (primes, rest) = order.split_at(n_primes);

    let tokens: Vec<BTreeSet<String>> = qa.iter().map(|q| tokenizer.token_set(&q.question)).collect();
    let mut pairs = Vec::new();
    for &i in primes {
        let mut best: Vec<usize> = Vec::new();
        let mut best_overlap = 0;
        let mut candidates: Vec<usize> = rest
            .iter()
            .copied()
            .filter(|&j| qa[i].gold_doc_ids.is_disjoint(&qa[j].gold_doc_ids))
            .collect();
        candidates.sort_unstable();
        for j in candidates {
            let overlap = tokens[i].intersection(&tokens[j]).count();
            if best.is_empty() || overlap > best_overlap {
                best = vec![j];
                best_overlap = overlap;
            } else if overlap == best_overlap {
                best.push(j);
            }
        }
        if !best.is_empty() {
            pairs.push((i, best[rng.random_range(0..best.len())]));
        }
    }
    if pairs.is_empty() {
        return Err(Error::NoDisjointPair);
    }

    let mut out: Vec<TraceQuery> = primes
        .iter()
        .enumerate()
        .map(|(seq, &i)| query(seq, &qa[i], Regime::NearMiss, snapshot_id, Origin::Prime))
        .collect();
    while out.len() < cfg.n_queries {
        let (_, j) = pairs[rng.random_range(0..pairs.len())];
        out.push(query(out.len(), &qa[j], Regime::NearMiss, snapshot_id, Origin::Replay));
    }
    Ok(out)
}

/// Id of the post-drift snapshot derived from `base_id`.
pub fn drift_snapshot_id(base_id: &str) -> String {
    format!("{base_id}-drift")
}

/// Primes on `base`, mutates the numeric tokens of every primed gold
/// document into one new snapshot, and replays primed questions against it.
pub fn synth_document_drift(
    qa: &[QAItem],
    cfg: &RegimeConfig,
    base: &CorpusSnapshot,
) -> Result<(Vec<TraceQuery>, CorpusSnapshot)> {
    cfg.check()?;
    need_two(qa)?;
    check_qa(qa, base)?;
    let mut rng = cfg.rng();
    let (primes, replays) = prime_and_sample(qa, cfg, &mut rng);
    let gold: BTreeSet<String> = primes
        .iter()
        .flat_map(|&i| qa[i].gold_doc_ids.iter().cloned())
        .collect();
    let mutated = base.with_mutated(drift_snapshot_id(&base.snapshot_id), &gold, cfg.seed)?;

    let mut out: Vec<TraceQuery> = primes
        .iter()
        .enumerate()
        .map(|(seq, &i)| query(seq, &qa[i], Regime::DocumentDrift, &base.snapshot_id, Origin::Prime))
        .collect();
    for &i in &replays {
        let mut q = query(out.len(), &qa[i], Regime::DocumentDrift, &mutated.snapshot_id, Origin::Replay);
        q.gold_answer = drifted_answer(&qa[i], base, &mutated);
        out.push(q);
    }
    Ok((out, mutated))
}

/// The gold answer read back from the same byte range of the mutated gold
/// document. Digit mutation preserves byte lengths, so the range lines up.
pub fn drifted_answer(item: &QAItem, base: &CorpusSnapshot, mutated: &CorpusSnapshot) -> String {
    if !item.gold_answer.bytes().any(|b| b.is_ascii_digit()) {
        return item.gold_answer.clone();
    }
    for id in &item.gold_doc_ids {
        let (Some(before), Some(after)) = (base.document(id), mutated.document(id)) else {
            continue;
        };
        if let Some(start) = find_token_bounded(&before.text, &item.gold_answer) {
            let end = start + item.gold_answer.len();
            if let Some(text) = after.text.get(start..end) {
                return text.to_string();
            }
        }
    }
    item.gold_answer.clone()
}

/// First occurrence of `needle` not glued to a neighbouring alphanumeric
/// character, so "57" does not match inside "1857".
fn find_token_bounded(haystack: &str, needle: &str) -> Option<usize> {
    if needle.is_empty() {
        return None;
    }
    haystack.match_indices(needle).map(|(i, _)| i).find(|&i| {
        let before = haystack[..i].chars().next_back();
        let after = haystack[i + needle.len()..].chars().next();
        !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
    })
}

/// The document with the most QA items (seeded tie-break).
pub fn busiest_document(qa: &[QAItem], seed: u64) -> Option<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for item in qa {
        for id in &item.gold_doc_ids {
            *counts.entry(id.as_str()).or_default() += 1;
        }
    }
    let max = counts.values().copied().max()?;
    let tied: Vec<&str> = counts.iter().filter(|(_, &c)| c == max).map(|(&d, _)| d).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Some(tied[rng.random_range(0..tied.len())].to_string())
}

/// The busiest document's items in input order, cycled to `n_queries`.
pub fn synth_long_shared_doc(qa: &[QAItem], cfg: &RegimeConfig, snapshot_id: &str) -> Result<Vec<TraceQuery>> {
    cfg.check()?;
    need_two(qa)?;
    let doc = busiest_document(qa, cfg.seed).ok_or(Error::NoDisjointPair)?;
    let items: Vec<&QAItem> = qa.iter().filter(|q| q.gold_doc_ids.contains(&doc)).collect();
    Ok((0..cfg.n_queries)
        .map(|seq| {
            let origin = if seq < items.len() { Origin::Prime } else { Origin::Replay };
            query(seq, items[seq % items.len()], Regime::LongSharedDoc, snapshot_id, origin)
        })
        .collect())
}

/// Dispatches to the synthesizer for `cfg.name`.
pub fn synthesize(
    qa: &[QAItem],
    cfg: &RegimeConfig,
    base: &CorpusSnapshot,
    tokenizer: &ContentTokenizer,
    paraphrases: &ParaphraseTable,
) -> Result<Trace> {
    check_qa(qa, base)?;
    let id = base.snapshot_id.as_str();
    let mut trace = Trace {
        regime: cfg.name,
        queries: Vec::new(),
        mutated: None,
        whole_kb: false,
    };
    trace.queries = match cfg.name {
        Regime::ExactRepeat => synth_exact_repeat(qa, cfg, id)?,
        Regime::Paraphrase => synth_paraphrase(qa, cfg, id, paraphrases)?,
        Regime::NearMiss => synth_near_miss(qa, cfg, id, tokenizer)?,
        Regime::DocumentDrift => {
            let (queries, mutated) = synth_document_drift(qa, cfg, base)?;
            trace.mutated = Some(mutated);
            queries
        }
        Regime::LongSharedDoc => synth_long_shared_doc(qa, cfg, id)?,
        Regime::BoundedKbCag => {
            trace.whole_kb = true;
            synth_bounded_kb_cag(qa, cfg, id)?
        }
    };
    Ok(trace)
}
