//! Properties of the shipped smoke corpus that the regime checks rely on.

use std::path::PathBuf;

use evcache::corpus::{load_corpus_jsonl, CorpusSnapshot};
use evcache::embed::{cosine, dedup_and_order, embed_text, HashEmbedder, VectorIndex};
use evcache::generate::{build_prompt, compress, generate_extractive, CompressionConfig};
use evcache::metrics::contains_gold;
use evcache::validator::ContentTokenizer;
use evcache::workload::{drifted_answer, load_qa_jsonl, ParaphraseTable, QAItem};

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn smoke() -> (CorpusSnapshot, Vec<QAItem>) {
    let docs = load_corpus_jsonl(data("smoke/corpus.jsonl")).unwrap();
    let snap = CorpusSnapshot::build("base", docs, 2).unwrap();
    (snap, load_qa_jsonl(data("smoke/qa.jsonl")).unwrap())
}

#[test]
fn shape() {
    let (snap, qa) = smoke();
    assert!(snap.documents.len() >= 20);
    assert!(qa.len() >= 40);
    let numeric = qa.iter().filter(|q| q.gold_answer.chars().any(|c| c.is_ascii_digit())).count();
    assert!(numeric * 2 >= qa.len());
}

#[test]
fn tiny_fixture_has_six_items() {
    assert_eq!(load_qa_jsonl(data("tiny/qa.jsonl")).unwrap().len(), 6);
    assert_eq!(load_corpus_jsonl(data("tiny/corpus.jsonl")).unwrap().len(), 3);
}

fn answer_for(index: &VectorIndex, q: &str, k: usize, tok: &ContentTokenizer) -> (String, Vec<String>) {
    let hits = dedup_and_order(index.top_k(&embed_text(q), k).unwrap());
    let docs = hits.iter().map(|h| h.chunk.doc_id.clone()).collect();
    let compressed = compress(q, &hits, &CompressionConfig::default(), tok).unwrap();
    let _ = build_prompt(q, &compressed);
    (generate_extractive(q, &compressed, tok), docs)
}

#[test]
fn retrieval_is_gold_faithful_and_answers_extract() {
    let (snap, qa) = smoke();
    let tok = ContentTokenizer::default();
    let all: std::collections::BTreeSet<String> = snap.documents.iter().map(|d| d.doc_id.clone()).collect();
    let mutated = snap.with_mutated("base-drift", &all, 7).unwrap();
    for s in [&snap, &mutated] {
        let index = VectorIndex::build(s, &HashEmbedder::default());
        for item in &qa {
            let (answer, docs) = answer_for(&index, &item.question, 5, &tok);
            assert!(
                docs.iter().all(|d| item.gold_doc_ids.contains(d)),
                "{}: retrieved {docs:?}",
                item.question
            );
            let gold = drifted_answer(item, &snap, s);
            assert!(contains_gold(&answer, &gold), "{} -> {answer} (gold {gold})", item.question);
        }
    }
}

#[test]
fn whole_kb_answers_extract() {
    let (snap, qa) = smoke();
    let tok = ContentTokenizer::default();
    let index = VectorIndex::build(&snap, &HashEmbedder::default());
    for item in &qa {
        let (answer, _) = answer_for(&index, &item.question, snap.chunks.len(), &tok);
        assert!(contains_gold(&answer, &item.gold_answer), "{} -> {answer}", item.question);
    }
}

#[test]
fn questions_are_pairwise_below_tau_q() {
    let (_, qa) = smoke();
    let embs: Vec<_> = qa.iter().map(|q| embed_text(&q.question)).collect();
    for i in 0..qa.len() {
        for j in i + 1..qa.len() {
            let c = cosine(&embs[i], &embs[j]).unwrap();
            assert!(c < 0.9, "{} / {} = {c}", qa[i].question, qa[j].question);
        }
    }
}

#[test]
fn paraphrases_mostly_stay_above_tau_q() {
    let (_, qa) = smoke();
    let table = ParaphraseTable::default();
    let mut close = 0;
    let mut total = 0;
    for (i, item) in qa.iter().enumerate() {
        for frame in 0..table.frames.len() {
            let p = table.rewrite(&item.question, i + frame);
            assert_ne!(p, item.question);
            total += 1;
            if cosine(&embed_text(&p), &embed_text(&item.question)).unwrap() >= 0.9 {
                close += 1;
            }
        }
    }
    assert!(close as f64 >= 0.9 * total as f64, "{close}/{total}");
}
