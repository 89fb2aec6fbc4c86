//! Argument parsing and dispatch for the `evcache` binary.
//!
//! Settings resolve in three layers: built-in defaults, then an optional
//! `--config` file (TOML or JSON, partial), then explicit flags.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use evcache::generate::GeneratorKind;
use evcache::harness::{self, RunConfig, Workspace};
use evcache::workload::Regime;

#[derive(Debug, Parser)]
#[command(name = "evcache", version, about = "Evidence-validated answer cache sweeps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Replay every (regime, variant) cell and write logs plus tables.
    Sweep(Box<SweepArgs>),
    /// Rebuild the tables from the JSONL logs in a directory.
    Report(ReportArgs),
    /// Print a synthesized trace as JSONL without replaying it.
    Trace(TraceArgs),
}

/// Inputs shared by `sweep` and `trace`.
#[derive(Debug, Args, Default)]
pub struct DataArgs {
    /// TOML or JSON file with any subset of the run settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub qa: Option<PathBuf>,
    /// Trace length, primes included.
    #[arg(long = "n")]
    pub n_queries: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub prime_fraction: Option<f64>,
    /// Sentences per chunk.
    #[arg(long)]
    pub chunk_sentences: Option<usize>,
    /// One stopword per line; replaces the built-in list.
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    #[arg(long)]
    pub min_token_len: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated regime names.
    #[arg(long)]
    pub regimes: Option<String>,
    /// Comma-separated variant names; an empty list runs nothing.
    #[arg(long)]
    pub variants: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub tau_q: Option<f64>,
    #[arg(long)]
    pub tau_e: Option<f64>,
    #[arg(long)]
    pub tau_s: Option<f64>,
    #[arg(long)]
    pub tau_ret: Option<f64>,
    /// Compression budget in content tokens.
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub generator: Option<GeneratorKind>,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub timeout_ms: Option<u64>,
    /// Add the always-generate baseline cell for each regime.
    #[arg(long)]
    pub no_cache: bool,
    /// Write each cell's final cache contents next to its log.
    #[arg(long)]
    pub dump_caches: bool,
    /// Write the resolved settings to this file (.json or .toml) and exit.
    #[arg(long)]
    pub dump_config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub logs: PathBuf,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub regime: Regime,
    /// Destination file; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    /// Rejected by the argument parser (also covers `--help`).
    Clap(clap::Error),
    Usage(String),
    Run(evcache::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Clap(e) => write!(f, "{e}"),
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<evcache::Error> for CliError {
    fn from(e: evcache::Error) -> Self {
        CliError::Run(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Clap(e) => e.exit_code(),
            CliError::Usage(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

/// A fully resolved command line.
#[derive(Debug, Clone, PartialEq)]
pub enum Invocation {
    Sweep(RunConfig),
    DumpConfig { config: RunConfig, path: PathBuf },
    Report { logs: PathBuf },
    Trace { config: RunConfig, regime: Regime, output: Option<PathBuf> },
}

pub fn parse_cli<I, T>(argv: I) -> Result<Invocation, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(CliError::Clap)?;
    match cli.command {
        Command::Sweep(args) => {
            let config = sweep_config(&args)?;
            Ok(match args.dump_config {
                Some(path) => Invocation::DumpConfig { config, path },
                None => Invocation::Sweep(config),
            })
        }
        Command::Report(args) => Ok(Invocation::Report { logs: args.logs }),
        Command::Trace(args) => {
            let mut config = base_config(&args.data)?;
            apply_data(&mut config, &args.data);
            require_inputs(&config)?;
            Ok(Invocation::Trace {
                config,
                regime: args.regime,
                output: args.output,
            })
        }
    }
}

fn base_config(data: &DataArgs) -> Result<RunConfig, CliError> {
    match &data.config {
        Some(path) => load_config(path),
        None => Ok(RunConfig::default()),
    }
}

fn sweep_config(args: &SweepArgs) -> Result<RunConfig, CliError> {
    let mut cfg = base_config(&args.data)?;
    apply_data(&mut cfg, &args.data);
    if let Some(v) = &args.out {
        cfg.out_dir = v.clone();
    }
    if let Some(v) = &args.regimes {
        cfg.regimes = parse_list(v, "regime")?;
    }
    if let Some(v) = &args.variants {
        cfg.variants = parse_list(v, "variant")?;
    }
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = args.$flag { cfg.$field = v; })*
        };
    }
    set!(k => k, tau_q => tau_q, tau_e => tau_e, tau_s => tau_s, tau_ret => tau_ret, budget => budget);
    if let Some(v) = args.generator {
        cfg.generator.kind = v;
    }
    if let Some(v) = &args.endpoint {
        cfg.generator.endpoint = Some(v.clone());
    }
    if let Some(v) = &args.model {
        cfg.generator.model_name = Some(v.clone());
    }
    if let Some(v) = args.timeout_ms {
        cfg.generator.timeout_ms = v;
    }
    cfg.no_cache |= args.no_cache;
    cfg.dump_caches |= args.dump_caches;
    require_inputs(&cfg)?;
    Ok(cfg)
}

fn apply_data(cfg: &mut RunConfig, data: &DataArgs) {
    if let Some(v) = &data.corpus {
        cfg.corpus_path = v.clone();
    }
    if let Some(v) = &data.qa {
        cfg.qa_path = v.clone();
    }
    if let Some(v) = data.n_queries {
        cfg.n_queries = v;
    }
    if let Some(v) = data.seed {
        cfg.seed = v;
    }
    if let Some(v) = data.prime_fraction {
        cfg.prime_fraction = v;
    }
    if let Some(v) = data.chunk_sentences {
        cfg.chunk_sentences = v;
    }
    if let Some(v) = &data.stopwords {
        cfg.stopwords_path = Some(v.clone());
    }
    if let Some(v) = data.min_token_len {
        cfg.min_token_len = v;
    }
}

fn require_inputs(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.corpus_path.as_os_str().is_empty() {
        return Err(CliError::Usage("a corpus path is required (--corpus or `corpus_path` in --config)".into()));
    }
    if cfg.qa_path.as_os_str().is_empty() {
        return Err(CliError::Usage("a QA path is required (--qa or `qa_path` in --config)".into()));
    }
    Ok(())
}

fn parse_list<T: FromStr<Err = evcache::Error>>(s: &str, what: &str) -> Result<Vec<T>, CliError> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse().map_err(|e| CliError::Usage(format!("bad {what} `{p}`: {e}"))))
        .collect()
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

/// Reads a config patch; `.json` files are JSON, anything else TOML.
pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config `{}`: {e}", path.display())))?;
    let parsed = if is_json(path) {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| CliError::Usage(format!("bad config `{}`: {e}", path.display())))
}

pub fn render_config(cfg: &RunConfig, path: &Path) -> Result<String, CliError> {
    if is_json(path) {
        Ok(serde_json::to_string_pretty(cfg).map_err(evcache::Error::from)? + "\n")
    } else {
        toml::to_string(cfg).map_err(|e| CliError::Usage(format!("cannot render config as TOML: {e}")))
    }
}

/// Executes an invocation and returns the process exit code.
pub fn run(inv: Invocation) -> Result<i32, CliError> {
    match inv {
        Invocation::DumpConfig { config, path } => {
            let text = render_config(&config, &path)?;
            fs::write(&path, text).map_err(|e| evcache::Error::io(&path, e))?;
            Ok(0)
        }
        Invocation::Sweep(cfg) => {
            let outcome = harness::run_sweep(&cfg)?;
            let mut stdout = io::stdout().lock();
            for ((r, v), s) in &outcome.summaries {
                let _ = writeln!(
                    stdout,
                    "{}  n={} ahr={:.4} usr={:.4} fh={:.4}",
                    harness::cell_name(*r, *v),
                    s.n,
                    s.ahr,
                    s.usr,
                    s.fh
                );
            }
            for (r, v, e) in &outcome.failures {
                eprintln!("cell {} failed: {e}", harness::cell_name(*r, *v));
            }
            Ok(if outcome.ok() { 0 } else { 1 })
        }
        Invocation::Report { logs } => {
            let tables = harness::report(&logs)?;
            let mut stdout = io::stdout().lock();
            for (name, table) in tables {
                let _ = writeln!(stdout, "== {name}\n{}", table.to_text());
            }
            Ok(0)
        }
        Invocation::Trace { config, regime, output } => {
            config.check()?;
            let ws = Workspace::load(&config)?;
            let trace = ws.trace(&config, regime)?;
            match output {
                Some(path) => {
                    let file = fs::File::create(&path).map_err(|e| evcache::Error::io(&path, e))?;
                    trace.write_jsonl(io::BufWriter::new(file))?;
                }
                None => trace.write_jsonl(io::stdout().lock())?,
            }
            Ok(0)
        }
    }
}
