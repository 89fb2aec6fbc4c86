//! Query-conditioned compression, prompt layout and answer generators.

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::Chunk;
use crate::embed::{cosine, Embedder, Embedding, HashEmbedder, ScoredChunk};
use crate::error::{Error, Result};
use crate::validator::ContentTokenizer;

pub use crate::text::split_sentences;

/// Environment variable holding the bearer token for the remote generator.
pub const API_KEY_ENV: &str = "EVCACHE_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionConfig {
    /// Maximum content tokens across greedily selected sentences.
    pub token_budget: usize,
    pub min_one_per_chunk: bool,
}

impl Default for CompressionConfig {
    fn default() -> Self {
        Self {
            token_budget: 120,
            min_one_per_chunk: true,
        }
    }
}

/// Shrinks retrieved evidence before generation. Learned compressors can
/// implement this in place of [`SentenceCompressor`].
pub trait Compressor: Send + Sync {
    fn compress(&self, query: &str, query_emb: &Embedding, chunks: &[ScoredChunk]) -> Result<Vec<ScoredChunk>>;
}

/// Sentence selection by cosine to the query under a content-token budget.
pub struct SentenceCompressor {
    pub config: CompressionConfig,
    pub tokenizer: ContentTokenizer,
    pub embedder: Arc<dyn Embedder>,
}

impl SentenceCompressor {
    pub fn new(config: CompressionConfig, tokenizer: ContentTokenizer, embedder: Arc<dyn Embedder>) -> Self {
        Self {
            config,
            tokenizer,
            embedder,
        }
    }
}

struct Candidate {
    chunk: usize,
    position: usize,
    score: f64,
    tokens: usize,
}

impl Compressor for SentenceCompressor {
    fn compress(&self, _query: &str, query_emb: &Embedding, chunks: &[ScoredChunk]) -> Result<Vec<ScoredChunk>> {
        let sentences: Vec<Vec<String>> = chunks.iter().map(|sc| split_sentences(&sc.chunk.text)).collect();
        let mut ranked = Vec::new();
        for (ci, group) in sentences.iter().enumerate() {
            for (pi, s) in group.iter().enumerate() {
                ranked.push(Candidate {
                    chunk: ci,
                    position: pi,
                    score: cosine(query_emb, &self.embedder.embed(s))?,
                    tokens: self.tokenizer.count(s),
                });
            }
        }
        ranked.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(a.chunk.cmp(&b.chunk))
                .then(a.position.cmp(&b.position))
        });

        let mut selected: Vec<Vec<bool>> = sentences.iter().map(|g| vec![false; g.len()]).collect();
        let mut used = 0;
        for c in &ranked {
            if used + c.tokens > self.config.token_budget {
                break;
            }
            used += c.tokens;
            selected[c.chunk][c.position] = true;
        }
        if self.config.min_one_per_chunk {
            for c in &ranked {
                if !selected[c.chunk].iter().any(|&s| s) {
                    selected[c.chunk][c.position] = true;
                }
            }
        }

        Ok(chunks
            .iter()
            .enumerate()
            .filter_map(|(ci, sc)| {
                let kept: Vec<&str> = sentences[ci]
                    .iter()
                    .zip(&selected[ci])
                    .filter(|(_, &keep)| keep)
                    .map(|(s, _)| s.as_str())
                    .collect();
                if kept.is_empty() {
                    return None;
                }
                let c = &sc.chunk;
                Some(ScoredChunk {
                    chunk: Chunk::new(c.doc_id.clone(), c.chunk_id, c.version, kept.join(" ")),
                    score: sc.score,
                })
            })
            .collect())
    }
}

/// Compresses with the default embedder; embeds `query` itself.
pub fn compress(
    query: &str,
    chunks: &[ScoredChunk],
    cfg: &CompressionConfig,
    tokenizer: &ContentTokenizer,
) -> Result<Vec<ScoredChunk>> {
    let embedder = Arc::new(HashEmbedder::default());
    let query_emb = embedder.embed(query);
    SentenceCompressor::new(cfg.clone(), tokenizer.clone(), embedder).compress(query, &query_emb, chunks)
}

const PROMPT_HEADER: &str = "Answer the question using only the evidence below.\n\n";

/// Evidence block (one header per chunk, in the given order) followed by the
/// question. Two prompts over the same evidence share the whole evidence
/// block as a prefix.
pub fn build_prompt(query: &str, chunks: &[ScoredChunk]) -> String {
    let mut prompt = evidence_block(chunks);
    prompt.push_str("Question: ");
    prompt.push_str(query);
    prompt.push_str("\nAnswer:");
    prompt
}

pub fn evidence_block(chunks: &[ScoredChunk]) -> String {
    let mut block = String::from(PROMPT_HEADER);
    for sc in chunks {
        let c = &sc.chunk;
        block.push_str(&format!("[{} #{}]\n{}\n\n", c.doc_id, c.chunk_id, c.text));
    }
    block
}

/// The evidence sentence sharing the most content tokens with the query.
///
/// Ties go to the smallest `(doc_id, chunk_id, sentence position)`. Returns
/// an empty string when no chunk has any sentence.
pub fn generate_extractive(query: &str, chunks: &[ScoredChunk], tokenizer: &ContentTokenizer) -> String {
    let query_tokens = tokenizer.token_set(query);
    let mut ordered: Vec<&Chunk> = chunks.iter().map(|sc| &sc.chunk).collect();
    ordered.sort_by(|a, b| a.key().cmp(&b.key()));
    let mut best: Option<(usize, String)> = None;
    for chunk in ordered {
        for sentence in split_sentences(&chunk.text) {
            let overlap = tokenizer
                .tokens(&sentence)
                .collect::<std::collections::BTreeSet<_>>()
                .intersection(&query_tokens)
                .count();
            if best.as_ref().is_none_or(|(b, _)| overlap > *b) {
                best = Some((overlap, sentence));
            }
        }
    }
    best.map(|(_, s)| s).unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    #[default]
    Extractive,
    Remote,
}

impl std::str::FromStr for GeneratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "extractive" => Ok(Self::Extractive),
            "remote" => Ok(Self::Remote),
            other => Err(Error::InvalidArgument(format!("unknown generator `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorAdapter {
    pub kind: GeneratorKind,
    pub endpoint: Option<String>,
    pub model_name: Option<String>,
    pub timeout_ms: u64,
}

impl Default for GeneratorAdapter {
    fn default() -> Self {
        Self {
            kind: GeneratorKind::Extractive,
            endpoint: None,
            model_name: None,
            timeout_ms: 30_000,
        }
    }
}

impl GeneratorAdapter {
    pub fn check(&self) -> Result<()> {
        if self.kind == GeneratorKind::Remote && self.endpoint.is_none() {
            return Err(Error::Config("remote generator requires an endpoint".into()));
        }
        Ok(())
    }

    pub fn build(&self, tokenizer: &ContentTokenizer) -> Result<Box<dyn Generator>> {
        self.check()?;
        Ok(match self.kind {
            GeneratorKind::Extractive => Box::new(ExtractiveGenerator {
                tokenizer: tokenizer.clone(),
            }),
            GeneratorKind::Remote => Box::new(RemoteGenerator::new(self.clone(), std::env::var(API_KEY_ENV).ok())),
        })
    }
}

/// Everything a generator may need; each backend uses what it wants.
pub struct GenerationRequest<'a> {
    pub query: &'a str,
    pub prompt: &'a str,
    pub chunks: &'a [ScoredChunk],
}

pub trait Generator: Send + Sync {
    fn generate(&self, request: &GenerationRequest<'_>) -> Result<String>;
}

#[derive(Debug, Clone, Default)]
pub struct ExtractiveGenerator {
    pub tokenizer: ContentTokenizer,
}

impl Generator for ExtractiveGenerator {
    fn generate(&self, request: &GenerationRequest<'_>) -> Result<String> {
        Ok(generate_extractive(request.query, request.chunks, &self.tokenizer))
    }
}

#[derive(Debug, Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Debug, Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
    stream: bool,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Debug, Deserialize)]
struct ChatReply {
    #[serde(default)]
    content: Option<String>,
}

/// Request body for one chat-completion call (single user turn, greedy).
pub fn chat_request_body(prompt: &str, model: &str) -> String {
    let req = ChatRequest {
        model,
        messages: [ChatMessage {
            role: "user",
            content: prompt,
        }],
        temperature: 0.0,
        stream: false,
    };
    serde_json::to_string(&req).expect("chat request serializes")
}

/// Extracts the first choice's text from a chat-completion response.
pub fn parse_chat_response(body: &str) -> Result<String> {
    let resp: ChatResponse =
        serde_json::from_str(body).map_err(|e| Error::Generation(format!("malformed response: {e}")))?;
    resp.choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .ok_or_else(|| Error::Generation("response has no choices".into()))
}

/// OpenAI-compatible chat-completions client. `endpoint` is the full URL.
pub struct RemoteGenerator {
    adapter: GeneratorAdapter,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl RemoteGenerator {
    pub fn new(adapter: GeneratorAdapter, api_key: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(adapter.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            adapter,
            api_key,
            agent,
        }
    }
}

impl Generator for RemoteGenerator {
    fn generate(&self, request: &GenerationRequest<'_>) -> Result<String> {
        let endpoint = self
            .adapter
            .endpoint
            .as_deref()
            .ok_or_else(|| Error::Config("remote generator requires an endpoint".into()))?;
        let model = self.adapter.model_name.as_deref().unwrap_or("default");
        let body = chat_request_body(request.prompt, model);
        let mut req = self.agent.post(endpoint).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send(body.as_bytes())
            .map_err(|e| Error::Generation(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::Generation(e.to_string()))?;
        if !status.is_success() {
            return Err(Error::Generation(format!("HTTP {}: {}", status.as_u16(), text)));
        }
        parse_chat_response(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chunk(doc: &str, id: u32, text: &str) -> ScoredChunk {
        ScoredChunk {
            chunk: Chunk::new(doc, id, 0, text),
            score: 0.5,
        }
    }

    #[test]
    fn slack_budget_is_noop() {
        let chunks = vec![
            chunk("a", 0, "The mill was built in 1840. It ground wheat."),
            chunk("b", 1, "The canal froze in winter."),
        ];
        let cfg = CompressionConfig {
            token_budget: 10_000,
            min_one_per_chunk: true,
        };
        let out = compress("when was the mill built", &chunks, &cfg, &ContentTokenizer::default()).unwrap();
        let texts: Vec<_> = out.iter().map(|c| c.chunk.text.as_str()).collect();
        assert_eq!(texts, vec![chunks[0].chunk.text.as_str(), chunks[1].chunk.text.as_str()]);
    }

    #[test]
    fn guarantee_floor_keeps_one_sentence_per_chunk() {
        let chunks = vec![
            chunk("a", 0, "Alpha beta gamma. Delta epsilon zeta."),
            chunk("b", 0, "Theta iota kappa. Lambda sigma omega."),
            chunk("c", 0, "Rho tau upsilon. Chi psi phi."),
        ];
        let cfg = CompressionConfig {
            token_budget: 1,
            min_one_per_chunk: true,
        };
        let out = compress("alpha theta rho", &chunks, &cfg, &ContentTokenizer::default()).unwrap();
        assert_eq!(out.len(), 3);
        for c in &out {
            assert_eq!(split_sentences(&c.chunk.text).len(), 1);
            assert_eq!(c.chunk.hash, crate::corpus::chunk_hash(&c.chunk.text));
        }
        assert_eq!(out[0].chunk.text, "Alpha beta gamma.");
    }

    #[test]
    fn chunks_without_selection_dropped_when_floor_off() {
        let chunks = vec![chunk("a", 0, "Alpha beta gamma."), chunk("b", 0, "Zeta omega chi.")];
        let cfg = CompressionConfig {
            token_budget: 3,
            min_one_per_chunk: false,
        };
        let out = compress("alpha beta gamma", &chunks, &cfg, &ContentTokenizer::default()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].chunk.doc_id, "a");
    }

    #[test]
    fn prompt_is_deterministic_and_order_sensitive() {
        let a = chunk("a", 0, "One.");
        let b = chunk("b", 0, "Two.");
        let p1 = build_prompt("q?", &[a.clone(), b.clone()]);
        assert_eq!(p1, build_prompt("q?", &[a.clone(), b.clone()]));
        assert_ne!(p1, build_prompt("q?", &[b, a]));
        assert!(p1.ends_with("Question: q?\nAnswer:"));
    }

    #[test]
    fn extractive_picks_max_overlap() {
        let chunks = vec![
            chunk("a", 0, "The harbor is deep. The lighthouse was built in 1887."),
            chunk("b", 0, "Other towns have lighthouses."),
        ];
        let tok = ContentTokenizer::default();
        assert_eq!(
            generate_extractive("When was the lighthouse built?", &chunks, &tok),
            "The lighthouse was built in 1887."
        );
        assert_eq!(generate_extractive("zebra", &chunks, &tok), "The harbor is deep.");
        assert_eq!(generate_extractive("zebra", &[chunk("a", 0, "")], &tok), "");
    }

    #[test]
    fn extractive_tie_break_uses_key_not_input_order() {
        let tok = ContentTokenizer::default();
        let chunks = vec![chunk("b", 0, "Granite quarry."), chunk("a", 5, "Granite hills.")];
        assert_eq!(generate_extractive("granite", &chunks, &tok), "Granite hills.");
    }

    #[test]
    fn remote_requires_endpoint() {
        let adapter = GeneratorAdapter {
            kind: GeneratorKind::Remote,
            ..GeneratorAdapter::default()
        };
        assert!(adapter.check().is_err());
    }

    #[test]
    fn response_parsing() {
        let body = r#"{"id":"x","choices":[{"index":0,"message":{"role":"assistant","content":"Paris"}}]}"#;
        assert_eq!(parse_chat_response(body).unwrap(), "Paris");
        assert!(parse_chat_response(r#"{"choices":[]}"#).is_err());
        assert!(parse_chat_response("not json").is_err());
    }
}
