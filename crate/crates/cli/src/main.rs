//! `hardneg`: mine, combine and score hard-negative sets, and check the
//! scores against downstream retrieval quality.
//!
//! Exit codes: 0 success, 2 invalid data, arguments or configuration,
//! 3 I/O failure.

mod analyze;
mod combine;
mod manifest;
mod mine;
mod output;
mod score;
mod source;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use manifest::RunManifest;
use output::Output;

#[derive(Debug, Parser)]
#[command(name = "hardneg", version, about = "Training-free diagnostics for hard-negative sets")]
struct Cli {
    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    threads: Option<u16>,
    /// Recorded in the manifest for runs that use randomized fixtures.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Directory for all outputs and the run manifest.
    #[arg(long, global = true, default_value = ".")]
    output_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Mine BM25 negatives for every query with known positives.
    Mine(mine::MineArgs),
    /// Compute similarity statistics and ECI reports per method.
    Score(score::ScoreArgs),
    /// Concatenate per-method negative sets into hybrids and truncate them.
    Combine(combine::CombineArgs),
    /// Correlate report metrics with downstream nDCG.
    Correlate(analyze::CorrelateArgs),
    /// nDCG@k of a TREC-style run against qrels.
    EvalNdcg(analyze::EvalArgs),
    /// Render reports (and correlations) as TSV or Markdown.
    Report(analyze::ReportArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Mine(_) => "mine",
            Command::Score(_) => "score",
            Command::Combine(_) => "combine",
            Command::Correlate(_) => "correlate",
            Command::EvalNdcg(_) => "eval-ndcg",
            Command::Report(_) => "report",
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<hardneg_core::Error>() {
            return if e.is_io() { 3 } else { 2 };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
    }
    2
}

fn dispatch(cli: &Cli, out: &mut Output, manifest: &mut RunManifest) -> anyhow::Result<()> {
    match &cli.command {
        Command::Mine(a) => mine::run(a, out, manifest),
        Command::Score(a) => score::run(a, out, manifest),
        Command::Combine(a) => combine::run(a, out, manifest),
        Command::Correlate(a) => analyze::correlate(a, out, manifest),
        Command::EvalNdcg(a) => analyze::eval_ndcg(a, out, manifest),
        Command::Report(a) => analyze::report(a, out, manifest),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n as usize).build_global() {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(3);
        }
    }
    if let Err(e) = std::fs::create_dir_all(&cli.output_dir) {
        eprintln!("error: {}: {e}", cli.output_dir.display());
        return ExitCode::from(3);
    }

    let name = cli.command.name();
    let mut manifest = RunManifest::new(name);
    manifest.param("seed", cli.seed);
    let mut out = Output::new(&cli.output_dir);
    let result = dispatch(&cli, &mut out, &mut manifest);

    let code = match &result {
        Ok(()) => 0,
        Err(e) => exit_code(e),
    };
    manifest.outputs = std::mem::take(&mut out.written);
    manifest.finish(code as i32, result.as_ref().err().map(|e| format!("{e:#}")));
    let manifest_path = cli.output_dir.join(format!("{name}.manifest.json"));
    let written = serde_json::to_string_pretty(&manifest)
        .map_err(anyhow::Error::from)
        .and_then(|s| Ok(std::fs::write(&manifest_path, s + "\n")?));

    if let Err(e) = &result {
        eprintln!("error: {e:#}");
    }
    if let Err(e) = written {
        eprintln!("error: cannot write {}: {e:#}", manifest_path.display());
        if code == 0 {
            return ExitCode::from(3);
        }
    }
    ExitCode::from(code)
}
