//! Command-line front end for the monitored decoding engine.
//!
//! Three subcommands: `run` benchmarks a decoding mode over a JSONL corpus,
//! `synth` writes a reproducible planted-error suite to disk, and
//! `oracle-check` cross-validates the pruned revision search against the
//! brute-force oracle on random instances.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error, 3 oracle mismatch.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use mondec::{
    emit_report, load_jsonl_corpus, oracle_check_sweep, render_markdown, run_benchmark,
    synth_hallucination_suite, write_jsonl_corpus, AcceptanceMode, BenchmarkOptions,
    BenchmarkReport, DecodeConfig, DecodeMode, Error, LmBackend, RemoteLm, ReportFormat, TableLm,
    TableLmSpec, WeightScheme,
};

#[derive(Parser)]
#[command(name = "mondec", version, about = "Monitored decoding workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Benchmark a decoding mode over a JSONL corpus.
    Run(RunArgs),
    /// Generate a synthetic suite with planted wrong-token boosts.
    Synth(SynthArgs),
    /// Check pruned revision against the brute-force oracle.
    OracleCheck(OracleArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Md,
    Greedy,
    Bon,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AcceptanceArg {
    Threshold,
    Clamped,
    Stochastic,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum WeightsArg {
    GeneratedPlusOne,
    FullContext,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Markdown,
}

impl From<ModeArg> for DecodeMode {
    fn from(mode: ModeArg) -> Self {
        match mode {
            ModeArg::Md => DecodeMode::Md,
            ModeArg::Greedy => DecodeMode::Greedy,
            ModeArg::Bon => DecodeMode::Bon,
        }
    }
}

impl From<AcceptanceArg> for AcceptanceMode {
    fn from(mode: AcceptanceArg) -> Self {
        match mode {
            AcceptanceArg::Threshold => AcceptanceMode::Threshold,
            AcceptanceArg::Clamped => AcceptanceMode::Clamped,
            AcceptanceArg::Stochastic => AcceptanceMode::Stochastic,
        }
    }
}

impl From<WeightsArg> for WeightScheme {
    fn from(scheme: WeightsArg) -> Self {
        match scheme {
            WeightsArg::GeneratedPlusOne => WeightScheme::GeneratedPlusOne,
            WeightsArg::FullContext => WeightScheme::FullContext,
        }
    }
}

impl From<FormatArg> for ReportFormat {
    fn from(format: FormatArg) -> Self {
        match format {
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Markdown => ReportFormat::Markdown,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Decoding mode to benchmark.
    #[arg(long, value_enum)]
    mode: ModeArg,

    /// Target model: a table-spec JSON file or a host:port endpoint.
    #[arg(long)]
    target: String,

    /// Reference model, same forms; greedy runs fall back to the target.
    #[arg(long, required_if_eq_any([("mode", "md"), ("mode", "bon")]))]
    reference: Option<String>,

    /// QA corpus, one JSON object per line.
    #[arg(long)]
    corpus: PathBuf,

    /// Monitor rejection threshold in [0, 1].
    #[arg(long, default_value_t = 0.8)]
    gamma0: f64,

    /// Tokens per monitored block.
    #[arg(long, default_value_t = 3)]
    block: usize,

    /// Branching factor of the revision search.
    #[arg(long, default_value_t = 2)]
    branch: usize,

    /// Survivors kept per revision layer.
    #[arg(long, default_value_t = 2)]
    keep: usize,

    /// Generation budget per item.
    #[arg(long, default_value_t = 64)]
    max_tokens: usize,

    /// How a block's monitor score becomes an accept/reject decision.
    #[arg(long, value_enum, default_value_t = AcceptanceArg::Threshold)]
    acceptance: AcceptanceArg,

    /// Denominator scheme for per-token monitor weights.
    #[arg(long, value_enum, default_value_t = WeightsArg::GeneratedPlusOne)]
    weights: WeightsArg,

    /// Candidate count for best-of-n runs.
    #[arg(long, default_value_t = 8)]
    bon_n: usize,

    /// RNG seed (stochastic acceptance, best-of-n sampling).
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Report destination; omitted means stdout.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Report format.
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
}

#[derive(Args)]
struct SynthArgs {
    /// RNG seed; the suite is a pure function of it.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Number of QA items.
    #[arg(long, default_value_t = 200)]
    size: usize,

    /// Vocabulary size (at least 4).
    #[arg(long, default_value_t = 16)]
    vocab: usize,

    /// Fraction of items that get a planted wrong-token boost.
    #[arg(long, default_value_t = 0.5)]
    error_rate: f64,

    /// Directory receiving corpus.jsonl, target.json, reference.json.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    /// RNG seed for instance generation.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Number of random instances to check.
    #[arg(long, default_value_t = 200)]
    trials: usize,
}

/// An existing file is read as a table spec; anything with a colon is
/// treated as a remote endpoint.
fn resolve_backend(spec: &str) -> mondec::Result<Box<dyn LmBackend>> {
    let path = Path::new(spec);
    if path.is_file() {
        return Ok(Box::new(TableLm::from_path(path)?));
    }
    if spec.strip_prefix("tcp://").unwrap_or(spec).contains(':') {
        return Ok(Box::new(RemoteLm::connect(spec)?));
    }
    Err(Error::invalid_argument(format!(
        "backend spec {spec:?} is neither an existing table file nor a host:port endpoint"
    )))
}

fn render(report: &BenchmarkReport, format: FormatArg) -> mondec::Result<String> {
    match format {
        FormatArg::Json => {
            let mut json = serde_json::to_string_pretty(report)
                .map_err(|e| Error::parse(e.to_string()))?;
            json.push('\n');
            Ok(json)
        }
        FormatArg::Markdown => Ok(render_markdown(report)),
    }
}

fn cmd_run(args: RunArgs) -> mondec::Result<i32> {
    let config = DecodeConfig {
        block_size_m: args.block,
        branch_n: args.branch,
        keep_k: args.keep,
        gamma0: args.gamma0,
        max_tokens: args.max_tokens,
        acceptance_mode: args.acceptance.into(),
        weight_scheme: args.weights.into(),
        seed: args.seed,
        ..DecodeConfig::default()
    };
    config.validate()?;

    let corpus = load_jsonl_corpus(&args.corpus)?;
    let reference_spec = args.reference.as_deref().unwrap_or(&args.target);
    let target = resolve_backend(&args.target)?;
    let reference = resolve_backend(reference_spec)?;

    let options = BenchmarkOptions {
        mode: args.mode.into(),
        bon_n: args.bon_n,
        target_label: args.target.clone(),
        reference_label: reference_spec.to_string(),
    };
    let report = run_benchmark(&corpus, target.as_ref(), reference.as_ref(), &config, &options)?;

    match &args.out {
        Some(path) => {
            emit_report(&report, path, args.format.into())?;
            println!(
                "wrote {} ({} items, em {:.3})",
                path.display(),
                report.items.len(),
                report.aggregates.em_rate
            );
        }
        None => print!("{}", render(&report, args.format)?),
    }
    Ok(0)
}

fn write_table_spec(path: &Path, spec: &TableLmSpec) -> mondec::Result<()> {
    let mut json =
        serde_json::to_string_pretty(spec).map_err(|e| Error::parse(e.to_string()))?;
    json.push('\n');
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

fn cmd_synth(args: SynthArgs) -> mondec::Result<i32> {
    // The planted boost always lifts the wrong token to probability 0.9.
    let suite = synth_hallucination_suite(args.seed, args.size, args.vocab, args.error_rate, 0.9)?;
    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;

    write_jsonl_corpus(&args.out_dir.join("corpus.jsonl"), &suite.corpus)?;
    write_table_spec(&args.out_dir.join("target.json"), &suite.target_spec)?;
    write_table_spec(&args.out_dir.join("reference.json"), &suite.reference_spec)?;

    let planted = suite
        .ground_truth
        .iter()
        .filter(|truth| truth.perturbed_position.is_some())
        .count();
    println!(
        "wrote {} items ({planted} perturbed) to {}",
        suite.corpus.len(),
        args.out_dir.display()
    );
    Ok(0)
}

fn cmd_oracle_check(args: OracleArgs) -> mondec::Result<i32> {
    let report = oracle_check_sweep(args.seed, args.trials)?;
    println!("{} trials, {} mismatches", report.trials, report.mismatches);
    if report.mismatches > 0 {
        if let Some(detail) = &report.first_mismatch {
            eprintln!("first mismatch: {detail}");
        }
        return Ok(3);
    }
    Ok(0)
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            std::process::exit(code);
        }
    };
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Synth(args) => cmd_synth(args),
        Command::OracleCheck(args) => cmd_oracle_check(args),
    };
    match outcome {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(2);
        }
    }
}
