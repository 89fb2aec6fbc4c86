//! Per-query correctness scoring and trace-level aggregation.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::router::{Path, Variant};
use crate::validator::{Gate, GateOutcome};
use crate::workload::Regime;

/// One JSONL record per routed query.
///
/// The gate fields describe the single nearest cached entry that was
/// validated; they are `null` when the answer cache was empty or off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryLog {
    pub seq: u64,
    pub regime: Regime,
    pub variant: Variant,
    pub path: Path,
    pub answer: String,
    pub gold_answer: String,
    pub em: bool,
    pub f1: f64,
    pub contains_gold: bool,
    pub disagreement: bool,
    pub g1_score: Option<f64>,
    pub g2_score: Option<f64>,
    pub g3_versions_match: Option<bool>,
    pub g4_score: Option<f64>,
    pub rejected_by: Option<Gate>,
    pub stale_hit: bool,
    pub unsupported_hit: bool,
    pub ttft: f64,
    pub retrieval_latency: f64,
    pub end_to_end: f64,
    pub prompt_tokens: usize,
    pub completion_tokens: usize,
}

/// Keys that vary between otherwise identical runs.
pub const TIMING_FIELDS: [&str; 3] = ["ttft", "retrieval_latency", "end_to_end"];

impl QueryLog {
    pub fn set_gates(&mut self, outcome: Option<&GateOutcome>) {
        self.g1_score = outcome.map(|o| o.g1_score);
        self.g2_score = outcome.map(|o| o.g2_score);
        self.g3_versions_match = outcome.map(|o| o.g3_versions_match);
        self.g4_score = outcome.map(|o| o.g4_score);
        self.rejected_by = outcome.and_then(|o| o.rejected_by);
    }
}

pub fn write_logs<W: Write>(logs: &[QueryLog], mut out: W) -> Result<()> {
    for log in logs {
        serde_json::to_writer(&mut out, log)?;
        out.write_all(b"\n").map_err(|e| Error::io("<log>", e))?;
    }
    Ok(())
}

pub fn read_logs<R: BufRead>(input: R) -> Result<Vec<QueryLog>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<log>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: "<log>".into(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Lowercase, drop ASCII punctuation and the articles a/an/the, collapse
/// whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let stripped: String = lowered.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    stripped
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn exact_match(pred: &str, gold: &str) -> bool {
    normalize_answer(pred) == normalize_answer(gold)
}

/// Bag-of-tokens F1 over normalized answers.
pub fn token_f1(pred: &str, gold: &str) -> f64 {
    let p = normalize_answer(pred);
    let g = normalize_answer(gold);
    let pt: Vec<&str> = p.split_whitespace().collect();
    let gt: Vec<&str> = g.split_whitespace().collect();
    match (pt.is_empty(), gt.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gt {
        *counts.entry(t).or_default() += 1;
    }
    let mut same = 0usize;
    for t in &pt {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                same += 1;
            }
        }
    }
    if same == 0 {
        return 0.0;
    }
    let precision = same as f64 / pt.len() as f64;
    let recall = same as f64 / gt.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

pub fn contains_gold(pred: &str, gold: &str) -> bool {
    normalize_answer(pred).contains(&normalize_answer(gold))
}

pub fn disagreement(f1: f64, contains: bool) -> bool {
    f1 < 0.5 && !contains
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correctness {
    pub em: bool,
    pub f1: f64,
    pub contains_gold: bool,
    pub disagreement: bool,
}

pub fn score_answer(pred: &str, gold: &str) -> Correctness {
    let f1 = token_f1(pred, gold);
    let contains = contains_gold(pred, gold);
    Correctness {
        em: exact_match(pred, gold),
        f1,
        contains_gold: contains,
        disagreement: disagreement(f1, contains),
    }
}

/// `(stale_hit, unsupported_hit)` for a served answer; both false off the
/// answer-cache path. Computed from observed scores whether or not the
/// corresponding gates were enabled.
pub fn classify_hit(path: Path, outcome: Option<&GateOutcome>, tau_s: f64) -> (bool, bool) {
    match (path, outcome) {
        (Path::AnswerCache, Some(o)) => (!o.g3_versions_match, o.g4_score < tau_s),
        _ => (false, false),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub ahr: f64,
    pub usr: f64,
    pub fh: f64,
    pub sh: f64,
    pub uh: f64,
    pub latency_p50: f64,
    pub ttft_p50: f64,
    pub mean_prompt_tokens: f64,
    pub mean_completion_tokens: f64,
    /// 95% Wilson upper bound on FH from (unsafe hits, hits).
    pub fh_wilson_upper: f64,
}

/// Element `⌊(n−1)/2⌋` of the sorted values; 0 for no values.
pub fn lower_median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted[(sorted.len() - 1) / 2]
}

pub fn aggregate(logs: &[QueryLog]) -> Summary {
    let n = logs.len();
    if n == 0 {
        return Summary {
            fh_wilson_upper: wilson_upper(0, 0, 1.96),
            ..Summary::default()
        };
    }
    let hits: Vec<&QueryLog> = logs.iter().filter(|l| l.path == Path::AnswerCache).collect();
    let unsafe_hits = hits.iter().filter(|l| l.disagreement).count();
    let stale = hits.iter().filter(|l| l.stale_hit).count();
    let unsupported = hits.iter().filter(|l| l.unsupported_hit).count();
    let rate = |k: usize| k as f64 / n as f64;
    let ahr = rate(hits.len());
    let usr = rate(unsafe_hits);
    let latencies: Vec<f64> = logs.iter().map(|l| l.end_to_end).collect();
    let ttfts: Vec<f64> = logs.iter().map(|l| l.ttft).collect();
    Summary {
        n,
        ahr,
        usr,
        fh: if hits.is_empty() { 0.0 } else { unsafe_hits as f64 / hits.len() as f64 },
        sh: rate(stale),
        uh: rate(unsupported),
        latency_p50: lower_median(&latencies),
        ttft_p50: lower_median(&ttfts),
        mean_prompt_tokens: logs.iter().map(|l| l.prompt_tokens as f64).sum::<f64>() / n as f64,
        mean_completion_tokens: logs.iter().map(|l| l.completion_tokens as f64).sum::<f64>() / n as f64,
        fh_wilson_upper: wilson_upper(unsafe_hits, hits.len(), 1.96),
    }
}

/// Upper end of the Wilson score interval for `successes / n`.
///
/// With `n = 0` nothing is known and the bound is 1.
pub fn wilson_upper(successes: usize, n: usize, z: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let center = p + z2 / (2.0 * n);
    let margin = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center + margin) / (1.0 + z2 / n)).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalRow {
    pub removed: Gate,
    pub variant: Variant,
    pub usr_no_x: f64,
    pub usr_full: f64,
    pub delta: f64,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

/// Mean USR over regimes with one gate removed, minus the full variant's.
///
/// Only the version, evidence and support ablations are reported, and only
/// when both they and `full` are present.
pub fn marginal_usr(per_variant: &BTreeMap<Variant, BTreeMap<Regime, Summary>>) -> Vec<MarginalRow> {
    let Some(full) = per_variant.get(&Variant::Full) else {
        return Vec::new();
    };
    let Some(usr_full) = mean(full.values().map(|s| s.usr)) else {
        return Vec::new();
    };
    [Variant::NoVersion, Variant::NoEvidence, Variant::NoSupport]
        .into_iter()
        .filter_map(|v| {
            let usr_no_x = mean(per_variant.get(&v)?.values().map(|s| s.usr))?;
            Some(MarginalRow {
                removed: v.removed_gate()?,
                variant: v,
                usr_no_x,
                usr_full,
                delta: usr_no_x - usr_full,
            })
        })
        .collect()
}

/// Aggregate over every generate-path record, regardless of variant.
pub fn no_cache_baseline<'a>(logs: impl IntoIterator<Item = &'a QueryLog>) -> Summary {
    let generated: Vec<QueryLog> = logs
        .into_iter()
        .filter(|l| l.path == Path::Generate)
        .cloned()
        .collect();
    aggregate(&generated)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log(path: Path, disagreement: bool, stale: bool, latency: f64) -> QueryLog {
        QueryLog {
            seq: 0,
            regime: Regime::ExactRepeat,
            variant: Variant::Naive,
            path,
            answer: String::new(),
            gold_answer: String::new(),
            em: false,
            f1: 0.0,
            contains_gold: !disagreement,
            disagreement,
            g1_score: None,
            g2_score: None,
            g3_versions_match: None,
            g4_score: None,
            rejected_by: None,
            stale_hit: stale,
            unsupported_hit: false,
            ttft: latency,
            retrieval_latency: 0.0,
            end_to_end: latency,
            prompt_tokens: 10,
            completion_tokens: 2,
        }
    }

    #[test]
    fn normalization_fixtures() {
        assert_eq!(normalize_answer("The Cat."), "cat");
        assert_eq!(normalize_answer("  An  apple, a day "), "apple day");
        assert_eq!(normalize_answer("Theater"), "theater");
        assert_eq!(normalize_answer("1,912"), "1912");
        assert_eq!(normalize_answer(""), "");
        let once = normalize_answer("A  the THE, Cat!");
        assert_eq!(normalize_answer(&once), once);
    }

    #[test]
    fn f1_fixtures() {
        assert_eq!(token_f1("a b c", "a b c"), 1.0);
        assert_eq!(token_f1("x y", "z w"), 0.0);
        assert!((token_f1("b c d", "c d e") - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(token_f1("", ""), 1.0);
        assert_eq!(token_f1("the", "cat"), 0.0);
    }

    #[test]
    fn disagreement_rule() {
        assert!(!disagreement(0.6, false));
        assert!(!disagreement(0.3, true));
        assert!(disagreement(0.3, false));
        assert!(contains_gold("It opened in 1912.", "1912"));
        assert!(contains_gold("anything", ""));
    }

    #[test]
    fn all_generate_has_zero_rates() {
        let logs = vec![log(Path::Generate, true, false, 1.0); 4];
        let s = aggregate(&logs);
        assert_eq!((s.ahr, s.usr, s.fh), (0.0, 0.0, 0.0));
        assert_eq!(s.n, 4);
    }

    #[test]
    fn fh_times_ahr_is_usr() {
        let logs = vec![
            log(Path::AnswerCache, true, true, 0.1),
            log(Path::AnswerCache, false, false, 0.2),
            log(Path::AnswerCache, false, false, 0.3),
            log(Path::Generate, false, false, 0.4),
            log(Path::RetrievalCache, true, false, 0.5),
        ];
        let s = aggregate(&logs);
        assert_eq!(s.ahr, 0.6);
        assert_eq!(s.usr, 0.2);
        assert!((s.fh * s.ahr - s.usr).abs() < 1e-12);
        assert_eq!(s.sh, 0.2);
        assert_eq!(s.latency_p50, 0.3);
    }

    #[test]
    fn lower_median_even_count() {
        assert_eq!(lower_median(&[4.0, 1.0, 3.0, 2.0]), 2.0);
        assert_eq!(lower_median(&[]), 0.0);
    }

    #[test]
    fn wilson_bounds() {
        let u = wilson_upper(0, 9, 1.96);
        assert!(u <= 0.34 && (u - 0.2992).abs() < 1e-3);
        assert!(wilson_upper(9, 9, 1.96) >= 1.0 - 1e-12);
        assert_eq!(wilson_upper(0, 0, 1.96), 1.0);
    }

    #[test]
    fn marginal_is_zero_when_traces_agree() {
        let s = Summary {
            usr: 0.1,
            ..Summary::default()
        };
        let by_regime: BTreeMap<_, _> = [(Regime::ExactRepeat, s.clone())].into();
        let per_variant: BTreeMap<_, _> = Variant::NAMED.into_iter().map(|v| (v, by_regime.clone())).collect();
        let rows = marginal_usr(&per_variant);
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.delta == 0.0));
    }

    #[test]
    fn baseline_counts_generate_records() {
        let logs = vec![
            log(Path::Generate, false, false, 3.0),
            log(Path::AnswerCache, false, false, 0.1),
            log(Path::Generate, false, false, 1.0),
        ];
        let b = no_cache_baseline(&logs);
        assert_eq!(b.n, 2);
        assert_eq!(b.latency_p50, 1.0);
    }

    #[test]
    fn log_round_trip() {
        let logs = vec![log(Path::AnswerCache, true, true, 0.5)];
        let mut buf = Vec::new();
        write_logs(&logs, &mut buf).unwrap();
        assert_eq!(read_logs(buf.as_slice()).unwrap(), logs);
    }
}
