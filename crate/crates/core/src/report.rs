//! Report tables rendered as CSV and as aligned plain text.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::metrics::{aggregate, MarginalRow, QueryLog, Summary};
use crate::router::Variant;
use crate::workload::Regime;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(headers: &[&str]) -> Self {
        Self {
            headers: headers.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.headers)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Columns padded to their widest cell; text left-aligned, numbers right.
    pub fn to_text(&self) -> String {
        let widths: Vec<usize> = (0..self.headers.len())
            .map(|c| {
                self.rows
                    .iter()
                    .map(|r| r[c].chars().count())
                    .chain([self.headers[c].chars().count()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |cells: &[String]| {
            let padded: Vec<String> = cells
                .iter()
                .zip(&widths)
                .map(|(cell, &w)| {
                    if is_numeric(cell) {
                        format!("{cell:>w$}")
                    } else {
                        format!("{cell:<w$}")
                    }
                })
                .collect();
            padded.join("  ").trim_end().to_string()
        };
        let mut out = line(&self.headers);
        out.push('\n');
        out.push_str(&widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().join("  "));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&line(row));
            out.push('\n');
        }
        out
    }
}

fn is_numeric(cell: &str) -> bool {
    cell.parse::<f64>().is_ok()
}

fn rate(x: f64) -> String {
    format!("{x:.4}")
}

fn ms(seconds: f64) -> String {
    format!("{:.4}", seconds * 1000.0)
}

fn tokens(x: f64) -> String {
    format!("{x:.2}")
}

pub fn summary_table(summaries: &BTreeMap<(Regime, Variant), Summary>) -> Table {
    let mut t = Table::new(&[
        "regime",
        "variant",
        "n",
        "ahr",
        "usr",
        "fh",
        "sh",
        "uh",
        "fh_wilson_upper",
        "latency_p50_ms",
        "ttft_p50_ms",
        "mean_prompt_tokens",
        "mean_completion_tokens",
    ]);
    for ((r, v), s) in summaries {
        t.push(vec![
            r.to_string(),
            v.to_string(),
            s.n.to_string(),
            rate(s.ahr),
            rate(s.usr),
            rate(s.fh),
            rate(s.sh),
            rate(s.uh),
            rate(s.fh_wilson_upper),
            ms(s.latency_p50),
            ms(s.ttft_p50),
            tokens(s.mean_prompt_tokens),
            tokens(s.mean_completion_tokens),
        ]);
    }
    t
}

/// Naive against full, one row per regime; missing cells print as `-`.
pub fn main_table(summaries: &BTreeMap<(Regime, Variant), Summary>) -> Table {
    let mut t = Table::new(&[
        "regime",
        "naive_ahr",
        "naive_usr",
        "naive_fh",
        "full_ahr",
        "full_usr",
        "full_fh",
    ]);
    let mut regimes: Vec<Regime> = summaries.keys().map(|(r, _)| *r).collect();
    regimes.dedup();
    for r in regimes {
        let mut row = vec![r.to_string()];
        for v in [Variant::Naive, Variant::Full] {
            match summaries.get(&(r, v)) {
                Some(s) => row.extend([rate(s.ahr), rate(s.usr), rate(s.fh)]),
                None => row.extend(["-".to_string(), "-".to_string(), "-".to_string()]),
            }
        }
        t.push(row);
    }
    t
}

/// Hit rate and conditional false-hit rate for every cell.
pub fn ablation_table(summaries: &BTreeMap<(Regime, Variant), Summary>) -> Table {
    let mut t = Table::new(&["regime", "variant", "ahr", "fh", "fh_wilson_upper"]);
    for ((r, v), s) in summaries {
        t.push(vec![
            r.to_string(),
            v.to_string(),
            rate(s.ahr),
            rate(s.fh),
            rate(s.fh_wilson_upper),
        ]);
    }
    t
}

pub fn marginal_table(rows: &[MarginalRow]) -> Table {
    let mut t = Table::new(&["removed_gate", "variant", "usr_no_x", "usr_full", "delta_usr"]);
    for row in rows {
        t.push(vec![
            row.removed.to_string(),
            row.variant.to_string(),
            rate(row.usr_no_x),
            rate(row.usr_full),
            rate(row.delta),
        ]);
    }
    t
}

fn per_variant(cells: &BTreeMap<(Regime, Variant), Vec<QueryLog>>) -> BTreeMap<Variant, Summary> {
    let mut logs: BTreeMap<Variant, Vec<QueryLog>> = BTreeMap::new();
    for ((_, v), l) in cells {
        logs.entry(*v).or_default().extend(l.iter().cloned());
    }
    logs.into_iter().map(|(v, l)| (v, aggregate(&l))).collect()
}

/// Median latency per variant against the generate-path baseline.
pub fn latency_table(cells: &BTreeMap<(Regime, Variant), Vec<QueryLog>>, baseline: &Summary) -> Table {
    let mut t = Table::new(&["variant", "n", "latency_p50_ms", "ttft_p50_ms", "speedup_vs_no_cache"]);
    t.push(vec![
        "baseline(generate-path)".into(),
        baseline.n.to_string(),
        ms(baseline.latency_p50),
        ms(baseline.ttft_p50),
        rate(1.0),
    ]);
    for (v, s) in per_variant(cells) {
        let speedup = if s.latency_p50 > 0.0 {
            rate(baseline.latency_p50 / s.latency_p50)
        } else {
            "-".into()
        };
        t.push(vec![
            v.to_string(),
            s.n.to_string(),
            ms(s.latency_p50),
            ms(s.ttft_p50),
            speedup,
        ]);
    }
    t
}

/// Mean content-token counts per variant over all its regimes.
pub fn cost_table(cells: &BTreeMap<(Regime, Variant), Vec<QueryLog>>) -> Table {
    let mut t = Table::new(&["variant", "n", "mean_prompt_tokens", "mean_completion_tokens", "ahr"]);
    for (v, s) in per_variant(cells) {
        t.push(vec![
            v.to_string(),
            s.n.to_string(),
            tokens(s.mean_prompt_tokens),
            tokens(s.mean_completion_tokens),
            rate(s.ahr),
        ]);
    }
    t
}
