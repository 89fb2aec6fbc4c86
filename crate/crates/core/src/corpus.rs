//! Version-tagged document store: normalization, chunking, content hashing
//! and the seeded numeric-drift mutator.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha1::{Digest, Sha1};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::text::{fnv1a64, split_sentences};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    #[serde(default)]
    pub version: u64,
    pub text: String,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            version: 0,
            text: text.into(),
        }
    }
}

/// A run of consecutive sentences from one document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_id: String,
    pub chunk_id: u32,
    pub version: u64,
    pub text: String,
    /// Lowercase hex SHA-1 of the normalized text.
    pub hash: String,
}

impl Chunk {
    pub fn new(doc_id: impl Into<String>, chunk_id: u32, version: u64, text: impl Into<String>) -> Self {
        let text = text.into();
        let hash = chunk_hash(&text);
        Self {
            doc_id: doc_id.into(),
            chunk_id,
            version,
            text,
            hash,
        }
    }

    /// Ordering key used for deterministic evidence layout.
    pub fn key(&self) -> (&str, u32) {
        (&self.doc_id, self.chunk_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSnapshot {
    pub snapshot_id: String,
    pub max_sentences_per_chunk: usize,
    pub documents: Vec<Document>,
    pub chunks: Vec<Chunk>,
}

impl CorpusSnapshot {
    /// Chunks every document. Fails on duplicate `doc_id`s.
    pub fn build(
        snapshot_id: impl Into<String>,
        documents: Vec<Document>,
        max_sentences_per_chunk: usize,
    ) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut chunks = Vec::new();
        for doc in &documents {
            if !seen.insert(doc.doc_id.as_str()) {
                return Err(Error::DuplicateDocument(doc.doc_id.clone()));
            }
            chunks.extend(chunk_document(doc, max_sentences_per_chunk)?);
        }
        Ok(Self {
            snapshot_id: snapshot_id.into(),
            max_sentences_per_chunk,
            documents,
            chunks,
        })
    }

    pub fn document(&self, doc_id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.doc_id == doc_id)
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    /// Returns a new snapshot in which the listed documents have been passed
    /// through [`mutate_numeric_tokens`]; everything else is carried over.
    pub fn with_mutated(
        &self,
        snapshot_id: impl Into<String>,
        doc_ids: &BTreeSet<String>,
        seed: u64,
    ) -> Result<Self> {
        for id in doc_ids {
            if self.document(id).is_none() {
                return Err(Error::UnknownDocument(id.clone()));
            }
        }
        let documents = self
            .documents
            .iter()
            .map(|d| {
                if doc_ids.contains(&d.doc_id) {
                    mutate_numeric_tokens(d, seed)
                } else {
                    d.clone()
                }
            })
            .collect();
        Self::build(snapshot_id, documents, self.max_sentences_per_chunk)
    }
}

/// NFC, trim, collapse internal whitespace runs to one space. Case is kept.
pub fn normalize_text(text: &str) -> String {
    let nfc: String = text.nfc().collect();
    nfc.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn chunk_hash(text: &str) -> String {
    let digest = Sha1::digest(normalize_text(text).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Groups sentences in order into chunks of at most `max_sentences_per_chunk`.
pub fn chunk_document(doc: &Document, max_sentences_per_chunk: usize) -> Result<Vec<Chunk>> {
    if max_sentences_per_chunk == 0 {
        return Err(Error::InvalidArgument(
            "max_sentences_per_chunk must be at least 1".into(),
        ));
    }
    let sentences = split_sentences(&doc.text);
    Ok(sentences
        .chunks(max_sentences_per_chunk)
        .enumerate()
        .map(|(i, group)| Chunk::new(doc.doc_id.clone(), i as u32, doc.version, group.join(" ")))
        .collect())
}

/// Replaces every maximal ASCII digit run with a different digit run of the
/// same length, drawn from an RNG seeded by `(seed, doc_id)`.
///
/// The version is bumped even when the text contains no digits.
pub fn mutate_numeric_tokens(doc: &Document, seed: u64) -> Document {
    let mut rng = ChaCha8Rng::seed_from_u64(mutation_seed(seed, &doc.doc_id));
    let mut out = String::with_capacity(doc.text.len());
    let mut run = String::new();
    for c in doc.text.chars() {
        if c.is_ascii_digit() {
            run.push(c);
            continue;
        }
        if !run.is_empty() {
            out.push_str(&redraw_digits(&run, &mut rng));
            run.clear();
        }
        out.push(c);
    }
    if !run.is_empty() {
        out.push_str(&redraw_digits(&run, &mut rng));
    }
    Document {
        doc_id: doc.doc_id.clone(),
        version: doc.version + 1,
        text: out,
    }
}

fn mutation_seed(seed: u64, doc_id: &str) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ fnv1a64(doc_id.as_bytes())
}

fn redraw_digits(original: &str, rng: &mut ChaCha8Rng) -> String {
    loop {
        let candidate: String = (0..original.len())
            .map(|_| char::from(b'0' + rng.random_range(0..10u8)))
            .collect();
        if candidate != original {
            return candidate;
        }
    }
}

/// Reads a corpus JSONL file: one `{"doc_id", "version"?, "text"}` per line.
pub fn load_corpus_jsonl(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    read_jsonl(path.as_ref())
}

pub(crate) fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    Ok(read_jsonl_numbered(path)?.into_iter().map(|(_, item)| item).collect())
}

/// Like [`read_jsonl`], keeping each item's 1-based line number.
pub(crate) fn read_jsonl_numbered<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, item));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn whitespace_collapse() {
        assert_eq!(normalize_text("  A  B\n"), "A B");
        assert_eq!(normalize_text(""), "");
        assert_eq!(normalize_text("Keep Case"), "Keep Case");
    }

    #[test]
    fn nfc_composes() {
        assert_eq!(normalize_text("e\u{301}"), "\u{e9}");
        assert_eq!(chunk_hash("e\u{301}"), chunk_hash("\u{e9}"));
    }

    #[test]
    fn hash_ignores_whitespace_but_not_case() {
        assert_eq!(chunk_hash("a  b"), chunk_hash("a b"));
        assert_ne!(chunk_hash("A b"), chunk_hash("a b"));
        assert_eq!(chunk_hash("abc").len(), 40);
    }

    #[test]
    fn chunk_sizes_follow_ceiling() {
        let doc = Document::new("d", "One. Two. Three. Four. Five.");
        let chunks = chunk_document(&doc, 2).unwrap();
        let sizes: Vec<_> = chunks
            .iter()
            .map(|c| split_sentences(&c.text).len())
            .collect();
        assert_eq!(sizes, vec![2, 2, 1]);
        assert_eq!(chunks.iter().map(|c| c.chunk_id).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn single_sentence_and_empty_documents() {
        let one = chunk_document(&Document::new("d", "Only one."), 3).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].chunk_id, 0);
        assert!(chunk_document(&Document::new("d", ""), 3).unwrap().is_empty());
        assert!(chunk_document(&Document::new("d", "x."), 0).is_err());
    }

    #[test]
    fn chunks_carry_version_and_hash() {
        let mut doc = Document::new("d", "A b. C d.");
        doc.version = 4;
        for c in chunk_document(&doc, 1).unwrap() {
            assert_eq!(c.version, 4);
            assert_eq!(c.hash, chunk_hash(&c.text));
        }
    }

    #[test]
    fn mutation_preserves_digit_shape() {
        let doc = Document::new("d1", "born in 1912");
        let m = mutate_numeric_tokens(&doc, 7);
        let digits = &m.text["born in ".len()..];
        assert_eq!(digits.len(), 4);
        assert!(digits.chars().all(|c| c.is_ascii_digit()));
        assert_ne!(digits, "1912");
        assert_eq!(m.version, 1);
        assert_eq!(m, mutate_numeric_tokens(&doc, 7));
    }

    #[test]
    fn mutation_without_digits_only_bumps_version() {
        let doc = Document::new("d", "no digits here");
        let m = mutate_numeric_tokens(&doc, 3);
        assert_eq!(m.text, doc.text);
        assert_eq!(m.version, 1);
    }

    #[test]
    fn mutation_depends_on_doc_id() {
        let a = mutate_numeric_tokens(&Document::new("a", "x 123456 y"), 1);
        let b = mutate_numeric_tokens(&Document::new("b", "x 123456 y"), 1);
        assert_ne!(a.text, b.text);
    }

    #[test]
    fn duplicate_doc_ids_rejected() {
        let docs = vec![Document::new("a", "x."), Document::new("a", "y.")];
        assert!(matches!(
            CorpusSnapshot::build("s", docs, 1),
            Err(Error::DuplicateDocument(_))
        ));
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(text in "\\PC{0,40}") {
            let once = normalize_text(&text);
            prop_assert_eq!(normalize_text(&once), once);
        }

        #[test]
        fn chunks_reproduce_sentences(words in proptest::collection::vec("[a-z]{1,6}", 1..20), max in 1usize..5) {
            let text = words.iter().map(|w| format!("{w}.")).collect::<Vec<_>>().join(" ");
            let doc = Document::new("d", text.clone());
            let rejoined: Vec<String> = chunk_document(&doc, max)
                .unwrap()
                .iter()
                .flat_map(|c| split_sentences(&c.text))
                .collect();
            prop_assert_eq!(rejoined, split_sentences(&text));
        }

        #[test]
        fn mutation_changes_hash_iff_digits(text in "[a-z0-9 ]{0,30}", seed in any::<u64>()) {
            let doc = Document::new("d", text.clone());
            let m = mutate_numeric_tokens(&doc, seed);
            let has_digit = text.chars().any(|c| c.is_ascii_digit());
            prop_assert_eq!(chunk_hash(&m.text) != chunk_hash(&text), has_digit);
            prop_assert_eq!(m.text.len(), text.len());
        }
    }
}
