//! Sweep runner: one fresh router per (regime, variant) cell, JSONL logs, and
//! summary tables rebuilt from those logs.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path as FsPath, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{load_corpus_jsonl, CorpusSnapshot};
use crate::embed::HashEmbedder;
use crate::error::{Error, Result};
use crate::generate::{CompressionConfig, GeneratorAdapter};
use crate::metrics::{
    aggregate, classify_hit, marginal_usr, no_cache_baseline, read_logs, score_answer, write_logs, QueryLog, Summary,
};
use crate::report::Table;
use crate::router::{RouteResult, Router, RouterSettings, Variant};
use crate::validator::{default_stopwords, parse_stopwords, ContentTokenizer, GateConfig};
use crate::workload::{load_qa_jsonl, synthesize, ParaphraseTable, QAItem, RegimeConfig, Regime, Trace, TraceQuery};

/// Snapshot id given to the corpus as loaded from disk.
pub const BASE_SNAPSHOT: &str = "base";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub corpus_path: PathBuf,
    pub qa_path: PathBuf,
    pub out_dir: PathBuf,
    pub regimes: Vec<Regime>,
    pub variants: Vec<Variant>,
    /// Also run the always-generate pseudo-variant.
    pub no_cache: bool,
    pub n_queries: usize,
    pub seed: u64,
    pub prime_fraction: f64,
    pub k: usize,
    pub chunk_sentences: usize,
    pub tau_q: f64,
    pub tau_e: f64,
    pub tau_s: f64,
    pub tau_ret: f64,
    pub budget: usize,
    pub min_one_per_chunk: bool,
    pub min_token_len: usize,
    /// Replaces the shipped stopword list when set.
    pub stopwords_path: Option<PathBuf>,
    pub generator: GeneratorAdapter,
    pub dump_caches: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus_path: PathBuf::new(),
            qa_path: PathBuf::new(),
            out_dir: PathBuf::from("out"),
            regimes: Regime::ALL.to_vec(),
            variants: Variant::NAMED.to_vec(),
            no_cache: false,
            n_queries: 200,
            seed: 7,
            prime_fraction: 0.5,
            k: 5,
            chunk_sentences: 2,
            tau_q: 0.90,
            tau_e: 0.60,
            tau_s: 0.60,
            tau_ret: 0.97,
            budget: 120,
            min_one_per_chunk: true,
            min_token_len: 3,
            stopwords_path: None,
            generator: GeneratorAdapter::default(),
            dump_caches: false,
        }
    }
}

impl RunConfig {
    pub fn check(&self) -> Result<()> {
        for (name, path) in [("corpus", &self.corpus_path), ("qa", &self.qa_path)] {
            if !path.is_file() {
                return Err(Error::Config(format!("{name} file `{}` does not exist", path.display())));
            }
        }
        if let Some(p) = &self.stopwords_path {
            if !p.is_file() {
                return Err(Error::Config(format!("stopwords file `{}` does not exist", p.display())));
            }
        }
        for (name, v) in [
            ("tau_q", self.tau_q),
            ("tau_e", self.tau_e),
            ("tau_s", self.tau_s),
            ("tau_ret", self.tau_ret),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        if self.k == 0 || self.budget == 0 || self.chunk_sentences == 0 {
            return Err(Error::Config("k, budget and chunk_sentences must be at least 1".into()));
        }
        self.regime_config(Regime::ExactRepeat).check()?;
        self.generator.check()
    }

    /// Cells in run order: regimes outermost, then variants.
    pub fn cells(&self) -> Vec<(Regime, Variant)> {
        let mut variants = self.variants.clone();
        if self.no_cache && !variants.contains(&Variant::NoCache) {
            variants.push(Variant::NoCache);
        }
        self.regimes
            .iter()
            .flat_map(|&r| variants.iter().map(move |&v| (r, v)))
            .collect()
    }

    pub fn regime_config(&self, regime: Regime) -> RegimeConfig {
        RegimeConfig {
            name: regime,
            n_queries: self.n_queries,
            seed: self.seed,
            prime_fraction: self.prime_fraction,
        }
    }

    pub fn tokenizer(&self) -> Result<ContentTokenizer> {
        let words = match &self.stopwords_path {
            Some(p) => parse_stopwords(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
            None => default_stopwords(),
        };
        Ok(ContentTokenizer::new(words, self.min_token_len))
    }

    pub fn gate_config(&self, tokenizer: &ContentTokenizer) -> GateConfig {
        GateConfig {
            tau_q: self.tau_q,
            tau_e: self.tau_e,
            tau_s: self.tau_s,
            enabled: Default::default(),
            tokenizer: tokenizer.clone(),
        }
    }
}

/// Everything loaded once and shared read-only by all cells.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub base: CorpusSnapshot,
    pub qa: Vec<QAItem>,
    pub tokenizer: ContentTokenizer,
    pub paraphrases: ParaphraseTable,
}

impl Workspace {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let docs = load_corpus_jsonl(&cfg.corpus_path)?;
        let base = CorpusSnapshot::build(BASE_SNAPSHOT, docs, cfg.chunk_sentences)?;
        if base.is_empty() {
            return Err(Error::EmptySnapshot(BASE_SNAPSHOT.into()));
        }
        Ok(Self {
            base,
            qa: load_qa_jsonl(&cfg.qa_path)?,
            tokenizer: cfg.tokenizer()?,
            paraphrases: ParaphraseTable::default(),
        })
    }

    pub fn trace(&self, cfg: &RunConfig, regime: Regime) -> Result<Trace> {
        synthesize(
            &self.qa,
            &cfg.regime_config(regime),
            &self.base,
            &self.tokenizer,
            &self.paraphrases,
        )
    }
}

pub fn cell_name(regime: Regime, variant: Variant) -> String {
    format!("{}__{}", regime.as_str(), variant.as_str())
}

/// Logs plus the routing detail behind each record.
#[derive(Debug, Clone)]
pub struct CellRun {
    pub trace: Trace,
    pub results: Vec<RouteResult>,
    pub logs: Vec<QueryLog>,
    pub summary: Summary,
    /// Answer-cache size after replay.
    pub answer_cache_len: usize,
    pub query_embeddings: u64,
}

/// Replays one cell through a freshly constructed router without touching
/// the filesystem.
pub fn replay_cell(regime: Regime, variant: Variant, cfg: &RunConfig, ws: &Workspace) -> Result<CellRun> {
    replay(regime, variant, cfg, ws).map(|(run, _)| run)
}

fn replay(regime: Regime, variant: Variant, cfg: &RunConfig, ws: &Workspace) -> Result<(CellRun, Router)> {
    let trace = ws.trace(cfg, regime)?;
    let gates = variant.gates().map(|enabled| GateConfig {
        enabled,
        ..cfg.gate_config(&ws.tokenizer)
    });
    let settings = RouterSettings {
        k: if trace.whole_kb { ws.base.chunks.len() } else { cfg.k },
        tau_ret: cfg.tau_ret,
        gates,
        compression: CompressionConfig {
            token_budget: cfg.budget,
            min_one_per_chunk: cfg.min_one_per_chunk,
        },
        retrieval_capacity: None,
        answer_capacity: None,
    };
    let generator = cfg.generator.build(&ws.tokenizer)?;
    let mut router = Router::with_parts(settings, Arc::new(HashEmbedder::default()), ws.tokenizer.clone(), generator);
    router.add_snapshot(&ws.base)?;
    if let Some(m) = &trace.mutated {
        router.add_snapshot(m)?;
    }

    let mut results = Vec::with_capacity(trace.queries.len());
    let mut logs = Vec::with_capacity(trace.queries.len());
    for q in &trace.queries {
        let r = router.route(&q.query, &q.snapshot_id)?;
        logs.push(log_record(q, variant, &r, cfg.tau_s));
        results.push(r);
    }
    let summary = aggregate(&logs);
    let run = CellRun {
        answer_cache_len: router.caches().answers.len(),
        query_embeddings: router.query_embeddings(),
        trace,
        results,
        logs,
        summary,
    };
    Ok((run, router))
}

pub fn log_record(q: &TraceQuery, variant: Variant, r: &RouteResult, tau_s: f64) -> QueryLog {
    let c = score_answer(&r.answer, &q.gold_answer);
    let (stale_hit, unsupported_hit) = classify_hit(r.path, r.gate_outcome.as_ref(), tau_s);
    let mut log = QueryLog {
        seq: q.seq,
        regime: q.regime,
        variant,
        path: r.path,
        answer: r.answer.clone(),
        gold_answer: q.gold_answer.clone(),
        em: c.em,
        f1: c.f1,
        contains_gold: c.contains_gold,
        disagreement: c.disagreement,
        g1_score: None,
        g2_score: None,
        g3_versions_match: None,
        g4_score: None,
        rejected_by: None,
        stale_hit,
        unsupported_hit,
        ttft: r.timings.ttft,
        retrieval_latency: r.timings.retrieval_latency,
        end_to_end: r.timings.end_to_end,
        prompt_tokens: r.token_counts.prompt_tokens,
        completion_tokens: r.token_counts.completion_tokens,
    };
    log.set_gates(r.gate_outcome.as_ref());
    log
}

fn create(path: &FsPath) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_file(path: &FsPath, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Replays one cell and writes `<out>/<regime>__<variant>.jsonl`. On failure
/// the error is written to `<regime>__<variant>.error` and returned.
pub fn run_cell(regime: Regime, variant: Variant, cfg: &RunConfig, ws: &Workspace) -> Result<(Vec<QueryLog>, Summary)> {
    let name = cell_name(regime, variant);
    let error_path = cfg.out_dir.join(format!("{name}.error"));
    match run_cell_inner(regime, variant, cfg, ws, &name) {
        Ok(out) => {
            if error_path.exists() {
                fs::remove_file(&error_path).map_err(|e| Error::io(&error_path, e))?;
            }
            Ok(out)
        }
        Err(e) => {
            write_file(&error_path, &format!("{name}: {e}\n"))?;
            Err(e)
        }
    }
}

fn run_cell_inner(
    regime: Regime,
    variant: Variant,
    cfg: &RunConfig,
    ws: &Workspace,
    name: &str,
) -> Result<(Vec<QueryLog>, Summary)> {
    let (run, router) = replay(regime, variant, cfg, ws)?;
    let path = cfg.out_dir.join(format!("{name}.jsonl"));
    let mut out = create(&path)?;
    write_logs(&run.logs, &mut out)?;
    out.flush().map_err(|e| Error::io(&path, e))?;
    if cfg.dump_caches {
        let path = cfg.out_dir.join(format!("{name}.caches.jsonl"));
        let mut out = create(&path)?;
        router.caches().dump_jsonl(&mut out)?;
        out.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok((run.logs, run.summary))
}

#[derive(Debug, Serialize)]
struct RunConfigEcho<'a> {
    config: &'a RunConfig,
    stopwords: Vec<&'a str>,
    min_token_len: usize,
    paraphrase_table_version: u32,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub summaries: BTreeMap<(Regime, Variant), Summary>,
    pub failures: Vec<(Regime, Variant, String)>,
}

impl SweepOutcome {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Runs every configured cell, then rebuilds all tables from the written
/// logs. A failing cell is recorded and the sweep continues.
pub fn run_sweep(cfg: &RunConfig) -> Result<SweepOutcome> {
    cfg.check()?;
    let mut outcome = SweepOutcome {
        summaries: BTreeMap::new(),
        failures: Vec::new(),
    };
    if cfg.cells().is_empty() {
        return Ok(outcome);
    }
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let ws = Workspace::load(cfg)?;
    let echo = RunConfigEcho {
        config: cfg,
        stopwords: ws.tokenizer.stopwords().iter().map(String::as_str).collect(),
        min_token_len: ws.tokenizer.min_token_len(),
        paraphrase_table_version: ws.paraphrases.version,
    };
    write_file(&cfg.out_dir.join("run_config.json"), &(serde_json::to_string_pretty(&echo)? + "\n"))?;

    for (regime, variant) in cfg.cells() {
        match run_cell(regime, variant, cfg, &ws) {
            Ok((_, summary)) => {
                outcome.summaries.insert((regime, variant), summary);
            }
            Err(e) => outcome.failures.push((regime, variant, e.to_string())),
        }
    }
    if !outcome.summaries.is_empty() {
        report(&cfg.out_dir)?;
    }
    Ok(outcome)
}

/// Reads every `<regime>__<variant>.jsonl` log in `dir`.
pub fn load_cell_logs(dir: &FsPath) -> Result<BTreeMap<(Regime, Variant), Vec<QueryLog>>> {
    let mut cells = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    for path in paths {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let Some((r, v)) = stem.split_once("__") else {
            continue;
        };
        let (Ok(regime), Ok(variant)) = (r.parse::<Regime>(), v.parse::<Variant>()) else {
            continue;
        };
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let logs = read_logs(BufReader::new(file)).map_err(|e| match e {
            Error::Parse { line, message, .. } => Error::Parse {
                path: path.clone(),
                line,
                message,
            },
            other => other,
        })?;
        cells.insert((regime, variant), logs);
    }
    Ok(cells)
}

/// The report tables, each written as `<name>.csv` and `<name>.txt`.
pub fn build_tables(cells: &BTreeMap<(Regime, Variant), Vec<QueryLog>>) -> Vec<(&'static str, Table)> {
    let summaries: BTreeMap<(Regime, Variant), Summary> =
        cells.iter().map(|(k, logs)| (*k, aggregate(logs))).collect();
    vec![
        ("summary", crate::report::summary_table(&summaries)),
        ("main_table", crate::report::main_table(&summaries)),
        ("ablation", crate::report::ablation_table(&summaries)),
        ("marginal", crate::report::marginal_table(&marginal_usr(&by_variant(&summaries)))),
        (
            "latency",
            crate::report::latency_table(cells, &no_cache_baseline(cells.values().flatten())),
        ),
        ("cost", crate::report::cost_table(cells)),
    ]
}

/// Per-variant, per-regime view of the summaries.
pub fn by_variant(summaries: &BTreeMap<(Regime, Variant), Summary>) -> BTreeMap<Variant, BTreeMap<Regime, Summary>> {
    let mut out: BTreeMap<Variant, BTreeMap<Regime, Summary>> = BTreeMap::new();
    for ((r, v), s) in summaries {
        out.entry(*v).or_default().insert(*r, s.clone());
    }
    out
}

/// Rebuilds every table from the logs in `dir` and writes them there.
pub fn report(dir: &FsPath) -> Result<Vec<(&'static str, Table)>> {
    let cells = load_cell_logs(dir)?;
    if cells.is_empty() {
        return Err(Error::Config(format!("no cell logs found in `{}`", dir.display())));
    }
    let tables = build_tables(&cells);
    for (name, table) in &tables {
        write_file(&dir.join(format!("{name}.csv")), &table.to_csv()?)?;
        write_file(&dir.join(format!("{name}.txt")), &table.to_text())?;
    }
    Ok(tables)
}
