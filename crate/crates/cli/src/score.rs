use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::Args;
use hardneg_core::analysis::{render_report, ReportFormat};
use hardneg_core::dataset::{load_triplets_with, save_scores, TripletLoadOptions};
use hardneg_core::eci::DEFAULT_TEMPERATURE;
use hardneg_core::similarity::{batch_stats, export_similarities, SimilaritySource};
use hardneg_core::{build_report, summarize_method, EciReport, Error, MethodSummary, PerQueryStats, ScoreEntry};
use serde::{Deserialize, Serialize};

use crate::manifest::RunManifest;
use crate::output::{tagged_paths, Output};
use crate::source::{self, SourceArgs};

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Negative set to score, as METHOD=PATH (repeatable). A bare path uses
    /// its file stem as the method name.
    #[arg(long = "triplets", value_name = "METHOD=PATH")]
    pub triplets: Vec<String>,
    #[command(flatten)]
    pub source: SourceArgs,
    /// Skip similarity computation and read per-method aggregates
    /// (`method \t n \t signal \t margin [\t s_max]` TSV, or JSON).
    #[arg(long, conflicts_with = "triplets")]
    pub from_summary: Option<PathBuf>,
    /// Temperature for the gradient-norm estimate.
    #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
    pub temperature: f64,
    /// Label stored in every report (e.g. the embedding model).
    #[arg(long)]
    pub model_tag: Option<String>,
    /// Also write every computed query/document cosine as a scores TSV.
    #[arg(long, value_name = "NAME")]
    pub export_scores: Option<String>,
    /// Accept repeated negatives within a query (plain concatenations).
    #[arg(long)]
    pub allow_duplicate_negatives: bool,
}

#[derive(Serialize)]
struct StatsLine<'a> {
    method: &'a str,
    #[serde(flatten)]
    stats: &'a PerQueryStats,
}

#[derive(Deserialize)]
struct SummaryRow {
    method: String,
    #[serde(alias = "mean_n")]
    n: f64,
    #[serde(alias = "mean_signal")]
    signal: f64,
    #[serde(alias = "mean_margin")]
    margin: f64,
    #[serde(default)]
    s_max: Option<f64>,
}

fn parse_error(path: &Path, line: usize, message: String) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    }
}

fn parse_summary_tsv(path: &Path, text: &str) -> Result<Vec<SummaryRow>, Error> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f[0] == "method" && rows.is_empty() {
            continue;
        }
        if !(4..=5).contains(&f.len()) {
            return Err(parse_error(
                path,
                line_no,
                format!("expected 4 or 5 tab-separated fields, found {}", f.len()),
            ));
        }
        let num = |j: usize, name: &str| -> Result<f64, Error> {
            f[j].trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_error(path, line_no, format!("{name} {:?} is not a finite number", f[j])))
        };
        rows.push(SummaryRow {
            method: f[0].to_string(),
            n: num(1, "n")?,
            signal: num(2, "signal")?,
            margin: num(3, "margin")?,
            s_max: if f.len() == 5 { Some(num(4, "s_max")?) } else { None },
        });
    }
    Ok(rows)
}

fn read_summaries(path: &Path) -> Result<Vec<MethodSummary>, Error> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let json = path.extension().and_then(|e| e.to_str()) == Some("json") || text.trim_start().starts_with('[');
    let rows = if json {
        serde_json::from_str::<Vec<SummaryRow>>(&text).map_err(|e| parse_error(path, e.line(), e.to_string()))?
    } else {
        parse_summary_tsv(path, &text)?
    };
    let mut seen = HashSet::new();
    let mut issues = Vec::new();
    for r in &rows {
        if !seen.insert(r.method.as_str()) {
            issues.push(format!("method {:?} listed more than once", r.method));
        }
        if r.n < 0.0 {
            issues.push(format!("method {:?}: n must be >= 0", r.method));
        }
        if r.margin < 0.0 {
            issues.push(format!("method {:?}: margin must be >= 0", r.method));
        }
    }
    if rows.is_empty() {
        issues.push("no summaries found".into());
    }
    if !issues.is_empty() {
        return Err(Error::Validation(issues));
    }
    Ok(rows
        .into_iter()
        .map(|r| MethodSummary {
            s_max: r.s_max,
            ..MethodSummary::from_aggregates(r.method, r.n, r.signal, r.margin)
        })
        .collect())
}

fn write_reports(
    summaries: &[MethodSummary],
    args: &ScoreArgs,
    out: &mut Output,
) -> Result<Vec<EciReport>> {
    let reports = summaries
        .iter()
        .map(|s| build_report(s, args.temperature, args.model_tag.as_deref()))
        .collect::<hardneg_core::Result<Vec<_>>>()?;
    out.json("summary.json", summaries)?;
    out.json("report.json", &reports)?;
    out.text("report.tsv", &render_report(&reports, None, ReportFormat::Tsv)?)?;
    Ok(reports)
}

pub fn run(args: &ScoreArgs, out: &mut Output, manifest: &mut RunManifest) -> Result<()> {
    manifest.param("temperature", args.temperature);
    manifest.param("model_tag", &args.model_tag);
    if !(args.temperature > 0.0 && args.temperature.is_finite()) {
        return Err(Error::Domain(format!("temperature must be > 0, got {}", args.temperature)).into());
    }

    if let Some(path) = &args.from_summary {
        if !args.source.is_empty() {
            return Err(Error::Config("--from-summary cannot be combined with --embeddings or --scores".into()).into());
        }
        manifest.param("mode", "from_summary");
        manifest.input("summary", path)?;
        let summaries = read_summaries(path)?;
        let reports = write_reports(&summaries, args, out)?;
        for r in &reports {
            eprintln!("{}\tECI {:.4}", r.method, r.eci);
        }
        return Ok(());
    }

    if args.triplets.is_empty() {
        return Err(Error::Config("give at least one --triplets METHOD=PATH, or --from-summary".into()).into());
    }
    manifest.param("mode", "similarity");
    manifest.param("allow_duplicate_negatives", args.allow_duplicate_negatives);
    let inputs = tagged_paths(&args.triplets)?;
    let loaded = source::load(&args.source, manifest)?
        .ok_or_else(|| Error::Config("scoring triplets needs --embeddings or --scores".into()))?;
    if args.export_scores.is_some() && !loaded.is_embeddings() {
        return Err(Error::Config("--export-scores needs --embeddings".into()).into());
    }
    let source = loaded.source();
    let opts = TripletLoadOptions {
        allow_duplicate_negatives: args.allow_duplicate_negatives,
    };

    let mut summaries = Vec::new();
    let mut stats_lines = String::new();
    let mut exported: BTreeMap<(String, String), f64> = BTreeMap::new();
    for (method, path) in &inputs {
        manifest.input(&format!("triplets.{method}"), path)?;
        let triplets = load_triplets_with(path, opts)?;
        let stats = batch_stats(&triplets, &source as &dyn SimilaritySource)?;
        for s in &stats {
            stats_lines.push_str(&serde_json::to_string(&StatsLine { method, stats: s })?);
            stats_lines.push('\n');
        }
        summaries.push(summarize_method(&stats, method)?);
        if args.export_scores.is_some() {
            for e in export_similarities(&triplets, &source)? {
                exported.insert((e.query_id, e.doc_id), e.score);
            }
        }
    }
    out.text("stats.jsonl", &stats_lines)?;
    if let Some(name) = &args.export_scores {
        crate::output::file_safe(name)?;
        let entries: Vec<ScoreEntry> = exported
            .into_iter()
            .map(|((query_id, doc_id), score)| ScoreEntry { query_id, doc_id, score })
            .collect();
        save_scores(out.record(name), &entries)?;
    }
    let reports = write_reports(&summaries, args, out)?;
    for r in &reports {
        eprintln!("{}\tn={:.2}\tECI {:.4}", r.method, r.n_effective, r.eci);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_tsv_with_and_without_header() {
        let p = Path::new("s.tsv");
        let rows = parse_summary_tsv(p, "method\tn\tsignal\tmargin\nbm25\t50\t0.577\t0.199\nce\t25\t0.6\t0.1\t0.7\n").unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].s_max, Some(0.7));
        let rows = parse_summary_tsv(p, "bm25\t50\t0.577\t0.199\n").unwrap();
        assert_eq!(rows[0].n, 50.0);
        assert!(matches!(parse_summary_tsv(p, "bm25\t50\tx\t0.1\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_summary_tsv(p, "bm25\t50\n"), Err(Error::Parse { .. })));
    }
}
