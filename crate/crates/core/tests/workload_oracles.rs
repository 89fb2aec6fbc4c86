//! Trace synthesizers on the smoke corpus against independent recomputation.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use evcache::corpus::{load_corpus_jsonl, CorpusSnapshot};
use evcache::validator::ContentTokenizer;
use evcache::workload::{
    busiest_document, load_qa_jsonl, synthesize, Origin, ParaphraseTable, QAItem, Regime, RegimeConfig, Trace,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn smoke() -> (CorpusSnapshot, Vec<QAItem>) {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/smoke");
    let docs = load_corpus_jsonl(dir.join("corpus.jsonl")).unwrap();
    (
        CorpusSnapshot::build("base", docs, 2).unwrap(),
        load_qa_jsonl(dir.join("qa.jsonl")).unwrap(),
    )
}

fn trace(regime: Regime, seed: u64) -> Trace {
    let (base, qa) = smoke();
    let cfg = RegimeConfig {
        seed,
        ..RegimeConfig::new(regime)
    };
    synthesize(&qa, &cfg, &base, &ContentTokenizer::default(), &ParaphraseTable::default()).unwrap()
}

fn jsonl(t: &Trace) -> Vec<u8> {
    let mut out = Vec::new();
    t.write_jsonl(&mut out).unwrap();
    out
}

#[test]
fn exact_repeat_follows_the_seeded_sampler() {
    let (_, qa) = smoke();
    let t = trace(Regime::ExactRepeat, 7);
    // ⌈0.5 · 200⌉ = 100 distinct primes out of 101 items.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut order: Vec<usize> = (0..qa.len()).collect();
    order.shuffle(&mut rng);
    order.truncate(100);
    let mut want: Vec<&str> = order.iter().map(|&i| qa[i].question.as_str()).collect();
    for _ in 100..200 {
        want.push(&qa[order[rng.random_range(0..order.len())]].question);
    }
    let got: Vec<&str> = t.queries.iter().map(|q| q.query.as_str()).collect();
    assert_eq!(got, want);
    assert!(t.queries[..100].iter().all(|q| q.origin == Origin::Prime));
    assert!(t.queries[100..].iter().all(|q| q.origin == Origin::Replay));
}

#[test]
fn same_seed_same_bytes_for_every_regime() {
    for regime in Regime::ALL {
        let a = trace(regime, 7);
        assert_eq!(jsonl(&a), jsonl(&trace(regime, 7)), "{regime}");
        assert_eq!(a.queries.len(), 200);
        for (i, q) in a.queries.iter().enumerate() {
            assert_eq!(q.seq, i as u64);
            assert_eq!(q.regime, regime);
            let drifted = regime == Regime::DocumentDrift && q.origin == Origin::Replay;
            assert_eq!(q.snapshot_id, if drifted { "base-drift" } else { "base" });
        }
        if regime != Regime::LongSharedDoc {
            assert_ne!(jsonl(&a), jsonl(&trace(regime, 8)), "{regime}");
        }
    }
}

#[test]
fn bounded_kb_text_equals_exact_repeat() {
    let a = trace(Regime::ExactRepeat, 3);
    let b = trace(Regime::BoundedKbCag, 3);
    assert!(b.whole_kb && !a.whole_kb);
    let text = |t: &Trace| t.queries.iter().map(|q| q.query.clone()).collect::<Vec<_>>();
    assert_eq!(text(&a), text(&b));
}

#[test]
fn paraphrase_replays_rewrite_primed_questions() {
    let t = trace(Regime::Paraphrase, 7);
    let primed: BTreeMap<&str, &str> = t
        .queries
        .iter()
        .filter(|q| q.origin == Origin::Prime)
        .map(|q| (q.query.as_str(), q.gold_answer.as_str()))
        .collect();
    for q in t.queries.iter().filter(|q| q.origin == Origin::Replay) {
        assert!(!primed.contains_key(q.query.as_str()));
        // The frame is one prepended word; the remainder maps back to a prime.
        let (_, rest) = q.query.split_once(' ').unwrap();
        let original = primed.keys().find(|p| {
            let a: Vec<&str> = p.split_whitespace().collect();
            let b: Vec<&str> = rest.split_whitespace().collect();
            a.len() == b.len() && a.iter().zip(&b).filter(|(x, y)| !x.eq_ignore_ascii_case(y)).count() <= 1
        });
        let original = original.unwrap_or_else(|| panic!("no prime for {}", q.query));
        assert_eq!(primed[original], q.gold_answer);
    }
}

#[test]
fn near_miss_partners_maximize_overlap_among_disjoint_items() {
    let (_, qa) = smoke();
    let tok = ContentTokenizer::default();
    let t = trace(Regime::NearMiss, 7);
    let index: BTreeMap<&str, usize> = qa.iter().enumerate().map(|(i, q)| (q.question.as_str(), i)).collect();
    let primes: Vec<usize> = t
        .queries
        .iter()
        .filter(|q| q.origin == Origin::Prime)
        .map(|q| index[q.query.as_str()])
        .collect();
    let primed: BTreeSet<usize> = primes.iter().copied().collect();
    assert_eq!(primes.len(), 50);

    let mut allowed: BTreeSet<usize> = BTreeSet::new();
    for &i in &primes {
        let candidates: Vec<usize> = (0..qa.len())
            .filter(|j| !primed.contains(j) && qa[i].gold_doc_ids.is_disjoint(&qa[*j].gold_doc_ids))
            .collect();
        let overlap = |j: usize| tok.token_set(&qa[i].question).intersection(&tok.token_set(&qa[j].question)).count();
        let best = candidates.iter().map(|&j| overlap(j)).max().unwrap();
        allowed.extend(candidates.into_iter().filter(|&j| overlap(j) == best));
    }
    for q in t.queries.iter().filter(|q| q.origin == Origin::Replay) {
        let j = index[q.query.as_str()];
        assert!(allowed.contains(&j), "{}", q.query);
        assert!(!primed.contains(&j));
        assert_eq!(q.gold_answer, qa[j].gold_answer);
    }
}

#[test]
fn drift_mutates_exactly_the_primed_gold_documents() {
    let (base, _) = smoke();
    let t = trace(Regime::DocumentDrift, 7);
    let mutated = t.mutated.as_ref().unwrap();
    let gold: BTreeSet<&String> = t
        .queries
        .iter()
        .filter(|q| q.origin == Origin::Prime)
        .flat_map(|q| &q.gold_doc_ids)
        .collect();
    for (b, m) in base.documents.iter().zip(&mutated.documents) {
        assert_eq!(b.doc_id, m.doc_id);
        assert_eq!(gold.contains(&b.doc_id), b.version != m.version, "{}", b.doc_id);
    }
    for q in t.queries.iter().filter(|q| q.origin == Origin::Replay) {
        let doc = mutated.document(q.gold_doc_ids.iter().next().unwrap()).unwrap();
        assert!(doc.text.contains(&q.gold_answer), "{} not in {}", q.gold_answer, doc.doc_id);
    }
}

#[test]
fn long_shared_doc_picks_the_busiest_document() {
    let (_, qa) = smoke();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for q in &qa {
        for d in &q.gold_doc_ids {
            *counts.entry(d).or_default() += 1;
        }
    }
    let max = *counts.values().max().unwrap();
    let doc = busiest_document(&qa, 7).unwrap();
    assert_eq!(counts[doc.as_str()], max);

    let t = trace(Regime::LongSharedDoc, 7);
    let items: Vec<&QAItem> = qa.iter().filter(|q| q.gold_doc_ids.contains(&doc)).collect();
    for (i, q) in t.queries.iter().enumerate() {
        assert_eq!(q.query, items[i % items.len()].question);
    }
}
