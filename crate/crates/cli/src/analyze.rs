use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::Args;
use hardneg_core::analysis::{evaluate_run, load_downstream, load_qrels, load_run};
use hardneg_core::{correlate_reports, render_report, CorrelationTable, EciReport, Error, ReportFormat};

use crate::manifest::RunManifest;
use crate::output::{file_safe, Output};

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Error> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Reads and concatenates report files, rejecting a method that appears
/// twice.
fn read_reports(paths: &[PathBuf], manifest: &mut RunManifest) -> Result<Vec<EciReport>> {
    let mut all: Vec<EciReport> = Vec::new();
    for (i, p) in paths.iter().enumerate() {
        manifest.input(&format!("reports.{i}"), p)?;
        all.extend(read_json::<Vec<EciReport>>(p)?);
    }
    let mut seen = HashSet::new();
    let dups: Vec<String> = all
        .iter()
        .filter(|r| !seen.insert(r.method.clone()))
        .map(|r| format!("method {:?} appears in more than one report", r.method))
        .collect();
    if !dups.is_empty() {
        return Err(Error::Validation(dups).into());
    }
    Ok(all)
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    /// `report.json` written by `score` (repeatable).
    #[arg(long = "reports", required = true)]
    pub reports: Vec<PathBuf>,
    /// `method \t dataset \t ndcg10` TSV.
    #[arg(long)]
    pub downstream: PathBuf,
}

pub fn correlate(args: &CorrelateArgs, out: &mut Output, manifest: &mut RunManifest) -> Result<()> {
    let reports = read_reports(&args.reports, manifest)?;
    manifest.input("downstream", &args.downstream)?;
    let downstream = load_downstream(&args.downstream)?;
    if let Some(t) = reports.first() {
        manifest.param("temperature", t.temperature);
    }
    let table = correlate_reports(&reports, &downstream)?;
    out.json("correlation.json", &table)?;
    let mut tsv = String::from("metric\tpearson_r\tn_points\n");
    for row in &table.rows {
        let _ = writeln!(tsv, "{}\t{:.6}\t{}", row.metric, row.pearson_r, row.n_points);
    }
    out.text("correlation.tsv", &tsv)?;
    for row in &table.rows {
        eprintln!("{}\tr = {:.4}", row.metric, row.pearson_r);
    }
    for (metric, why) in &table.undefined {
        eprintln!("{metric}\tundefined: {why}");
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// `query_id \t doc_id \t grade` TSV.
    #[arg(long)]
    pub qrels: PathBuf,
    /// `query_id \t doc_id \t rank \t score` TSV.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
}

pub fn eval_ndcg(args: &EvalArgs, out: &mut Output, manifest: &mut RunManifest) -> Result<()> {
    manifest.param("k", args.k);
    if args.k == 0 {
        return Err(Error::Domain("k must be >= 1".into()).into());
    }
    manifest.input("qrels", &args.qrels)?;
    manifest.input("run", &args.run)?;
    let qrels = load_qrels(&args.qrels)?;
    let run = load_run(&args.run)?;
    let eval = evaluate_run(&qrels, &run, args.k)?;
    out.json("ndcg.json", &eval)?;
    let mut tsv = format!("query_id\tndcg@{}\n", args.k);
    for (q, v) in &eval.per_query {
        let _ = writeln!(tsv, "{q}\t{v:.6}");
    }
    let _ = writeln!(tsv, "mean\t{:.6}", eval.mean);
    out.text("ndcg.tsv", &tsv)?;
    eprintln!("nDCG@{} = {:.4} over {} queries", args.k, eval.mean, eval.per_query.len());
    Ok(())
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// `report.json` written by `score` (repeatable).
    #[arg(long = "reports", required = true)]
    pub reports: Vec<PathBuf>,
    /// `correlation.json` written by `correlate`.
    #[arg(long)]
    pub correlations: Option<PathBuf>,
    /// tsv or md.
    #[arg(long, default_value = "md")]
    pub format: ReportFormat,
    /// Output file name. Default: report.md or report.tsv.
    #[arg(long)]
    pub out: Option<String>,
}

pub fn report(args: &ReportArgs, out: &mut Output, manifest: &mut RunManifest) -> Result<()> {
    let ext = match args.format {
        ReportFormat::Tsv => "tsv",
        ReportFormat::Markdown => "md",
    };
    manifest.param("format", ext);
    let name = args.out.clone().unwrap_or_else(|| format!("report.{ext}"));
    file_safe(&name)?;
    let reports = read_reports(&args.reports, manifest)?;
    let corr: Option<CorrelationTable> = match &args.correlations {
        Some(p) => {
            manifest.input("correlations", p)?;
            Some(read_json(p)?)
        }
        None => None,
    };
    let doc = render_report(&reports, corr.as_ref(), args.format)?;
    let path = out.text(&name, &doc)?;
    eprintln!("{} methods -> {}", reports.len(), path.display());
    Ok(())
}
