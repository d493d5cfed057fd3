mod commands;
mod config;
mod exit;
mod files;
mod runtime;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cmbe_model::Strategy;

use crate::config::{PoolKind, RunConfig, ScorerKind};

#[derive(Debug, Parser)]
#[command(name = "cmbe", version, about = "Multi-bias NLI benchmark generation, bias probing and CMBE calibration")]
struct Cli {
    /// TOML experiment manifest; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replay cache for model predictions.
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    /// Answer only from the replay cache.
    #[arg(long, global = true)]
    offline: bool,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true)]
    log_level: Option<String>,
    /// Concurrent model calls.
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the 5-bias benchmark (or a synthetic oracle pool) and verify it.
    Generate(GenerateArgs),
    /// Measure each feature's bias polarity on a probe pool.
    Probe(ProbeArgs),
    /// Fit a calibration profile (feature effects and type weights).
    Calibrate(CalibrateArgs),
    /// Predict a dataset and subtract the calibrated bias effects.
    Debias(DebiasArgs),
    /// Score predictions against gold labels, or compare several runs.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct SourceArgs {
    /// Synthetic oracle: five-bias, polarity-study, unbiased, or a JSON file.
    #[arg(long)]
    oracle: Option<String>,
    /// Model name at the chat-completions endpoint.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    base_url: Option<String>,
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<Strategy>,
    /// Samples per prompt for the sample-k strategy.
    #[arg(long)]
    k: Option<u32>,
    /// Request seed for sample-k runs.
    #[arg(long)]
    run_seed: Option<u64>,
    /// Labeled JSONL pool for few-shot demonstrations.
    #[arg(long)]
    few_shot: Option<PathBuf>,
    #[arg(long)]
    demo_seed: Option<u64>,
}

#[derive(Debug, Args)]
struct DetectorArgs {
    #[arg(long, value_enum)]
    scorer: Option<ScorerKind>,
    /// Directory with the word-list files.
    #[arg(long)]
    lexicon_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    total: Option<usize>,
    #[arg(long)]
    vocab_dir: Option<PathBuf>,
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Emit a synthetic, pre-annotated pool for oracle runs.
    #[arg(long, value_enum)]
    oracle_pool: Option<PoolKind>,
    /// Samples per label and feature group in an oracle pool.
    #[arg(long)]
    per_label: Option<usize>,
    #[arg(long)]
    max_attempts: Option<usize>,
    #[command(flatten)]
    detectors: DetectorArgs,
}

#[derive(Debug, Args)]
struct ProbeArgs {
    #[arg(long)]
    pool: Option<PathBuf>,
    /// Feature id, comma-separated ids, or `all`.
    #[arg(long)]
    feature: Option<String>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    detectors: DetectorArgs,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[arg(long)]
    pool: Option<PathBuf>,
    /// Comma-separated known bias types.
    #[arg(long)]
    known: Option<String>,
    /// Draw this many known types at random (e.g. 3 for CMBE-3).
    #[arg(long)]
    random_known: Option<usize>,
    /// Number of random draws, one profile each.
    #[arg(long)]
    draws: Option<usize>,
    /// Stage-1 samples per feature.
    #[arg(long)]
    n: Option<usize>,
    /// Stage-2 samples.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    ridge: Option<f64>,
    #[arg(long)]
    rank_tolerance: Option<f64>,
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    detectors: DetectorArgs,
}

#[derive(Debug, Args)]
struct DebiasArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    profile: Option<PathBuf>,
    /// Raw predictions without correction.
    #[arg(long)]
    vanilla: bool,
    /// Method name recorded for evaluation.
    #[arg(long)]
    method: Option<String>,
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    detectors: DetectorArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Gold dataset; defaults to the one recorded with the predictions.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, num_args = 1..)]
    predictions: Vec<PathBuf>,
    #[arg(long)]
    method: Option<String>,
    /// Build a comparison table over all prediction files.
    #[arg(long)]
    compare: bool,
    /// JSON output (report or table).
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// CSV output.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    match s {
        "logprob" => Ok(Strategy::Logprob),
        "sample-k" => Ok(Strategy::SampleK),
        _ => Err(format!("unknown strategy `{s}` (logprob or sample-k)")),
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

impl SourceArgs {
    fn apply(self, cfg: &mut RunConfig) {
        set_opt(&mut cfg.source.oracle, self.oracle);
        let e = &mut cfg.source.endpoint;
        set(&mut e.model, self.model);
        set(&mut e.base_url, self.base_url);
        set(&mut e.strategy, self.strategy);
        set(&mut e.k, self.k);
        set_opt(&mut e.run_seed, self.run_seed);
        set_opt(&mut cfg.prompt.few_shot_pool, self.few_shot);
        set(&mut cfg.prompt.demo_seed, self.demo_seed);
    }
}

impl DetectorArgs {
    fn apply(self, cfg: &mut RunConfig) {
        set(&mut cfg.detectors.scorer, self.scorer);
        set_opt(&mut cfg.detectors.lexicon_dir, self.lexicon_dir);
    }
}

/// Loads the manifest and lays the flags over it.
fn effective_config(cli: Cli) -> anyhow::Result<(RunConfig, Kind)> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    set_opt(&mut cfg.cache, cli.cache);
    cfg.offline |= cli.offline;
    set_opt(&mut cfg.log_level, cli.log_level);
    set_opt(&mut cfg.parallelism, cli.parallelism);
    match cli.command {
        Command::Generate(a) => {
            let g = &mut cfg.generate;
            set(&mut g.seed, a.seed);
            set(&mut g.total, a.total);
            set_opt(&mut g.vocab_dir, a.vocab_dir);
            set_opt(&mut g.out, a.out);
            set_opt(&mut g.oracle_pool, a.oracle_pool);
            set_opt(&mut g.per_label, a.per_label);
            set_opt(&mut g.max_attempts, a.max_attempts);
            a.detectors.apply(&mut cfg);
            Ok((cfg, Kind::Generate))
        }
        Command::Probe(a) => {
            let p = &mut cfg.probe;
            set_opt(&mut p.pool, a.pool);
            set_opt(&mut p.feature, a.feature);
            set_opt(&mut p.out_dir, a.out_dir);
            a.source.apply(&mut cfg);
            a.detectors.apply(&mut cfg);
            Ok((cfg, Kind::Probe))
        }
        Command::Calibrate(a) => {
            let c = &mut cfg.calibrate;
            set_opt(&mut c.pool, a.pool);
            set(&mut c.known, a.known);
            set_opt(&mut c.random_known, a.random_known);
            set(&mut c.draws, a.draws);
            set(&mut c.n, a.n);
            set(&mut c.m, a.m);
            set(&mut c.seed, a.seed);
            set(&mut c.ridge, a.ridge);
            set(&mut c.rank_tolerance, a.rank_tolerance);
            set_opt(&mut c.out, a.out);
            a.source.apply(&mut cfg);
            a.detectors.apply(&mut cfg);
            Ok((cfg, Kind::Calibrate))
        }
        Command::Debias(a) => {
            let d = &mut cfg.debias;
            set_opt(&mut d.dataset, a.dataset);
            set_opt(&mut d.profile, a.profile);
            d.vanilla |= a.vanilla;
            set_opt(&mut d.method, a.method);
            set_opt(&mut d.out, a.out);
            a.source.apply(&mut cfg);
            a.detectors.apply(&mut cfg);
            Ok((cfg, Kind::Debias))
        }
        Command::Eval(a) => {
            let e = &mut cfg.eval;
            set_opt(&mut e.dataset, a.dataset);
            if !a.predictions.is_empty() {
                e.predictions = a.predictions;
            }
            set_opt(&mut e.method, a.method);
            e.compare |= a.compare;
            set_opt(&mut e.out, a.out);
            set_opt(&mut e.csv, a.csv);
            Ok((cfg, Kind::Eval))
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Kind {
    Generate,
    Probe,
    Calibrate,
    Debias,
    Eval,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let (cfg, kind) = effective_config(cli)?;
    let level = cfg.log_level.as_deref().unwrap_or("info");
    env_logger::Builder::new()
        .parse_filters(level)
        .parse_env("CMBE_LOG")
        .format_timestamp(None)
        .try_init()
        .ok();
    match kind {
        Kind::Generate => commands::generate(&cfg),
        Kind::Probe => commands::probe(&cfg),
        Kind::Calibrate => commands::calibrate(&cfg),
        Kind::Debias => commands::debias(&cfg),
        Kind::Eval => commands::eval(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::exit_code(&e))
        }
    }
}
