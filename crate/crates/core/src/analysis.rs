//! Downstream alignment: Pearson correlation of intrinsic metrics against
//! retrieval quality, an nDCG@k evaluator over TREC-style files, and report
//! rendering.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::eci::EciReport;
use crate::error::{Error, Result};

/// Sample Pearson correlation, clipped to `[-1, 1]`.
pub fn pearson_r(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Shape {
            expected: xs.len(),
            found: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::domain("correlation needs at least 2 points"));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::domain("correlation inputs must be finite"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::domain("correlation undefined for a constant series"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// nDCG@k with exponential gain `2^g − 1` and `log2(rank + 1)` discount.
/// Repeated ids in `ranked` count once, at their first position. Returns 0
/// when nothing in `relevances` has a positive grade.
pub fn ndcg_at_k<S: AsRef<str>>(ranked: &[S], relevances: &HashMap<String, u32>, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::domain("k must be >= 1"));
    }
    let gain = |g: u32| 2f64.powi(g as i32) - 1.0;
    let discount = |rank: usize| (rank as f64 + 1.0).log2();

    let mut seen = HashSet::new();
    let dcg: f64 = ranked
        .iter()
        .map(AsRef::as_ref)
        .filter(|id| seen.insert(*id))
        .take(k)
        .enumerate()
        .map(|(i, id)| gain(relevances.get(id).copied().unwrap_or(0)) / discount(i + 1))
        .sum();

    let mut ideal: Vec<u32> = relevances.values().copied().filter(|&g| g > 0).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain(g) / discount(i + 1))
        .sum();
    if idcg == 0.0 {
        return Ok(0.0);
    }
    Ok(dcg / idcg)
}

/// Relevance judgments: query id → (doc id → grade).
pub type Qrels = BTreeMap<String, HashMap<String, u32>>;

#[derive(Debug, Clone, PartialEq)]
pub struct RunEntry {
    pub doc_id: String,
    pub rank: u32,
    pub score: f64,
}

/// A ranked run: query id → entries sorted by rank.
pub type Run = BTreeMap<String, Vec<RunEntry>>;

fn tsv_lines(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push((i + 1, line.split('\t').map(|s| s.trim().to_string()).collect()));
    }
    Ok(out)
}

fn parse_field<T: FromStr>(path: &Path, line: usize, what: &str, raw: &str) -> Result<T> {
    raw.parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("bad {what} {raw:?}"),
    })
}

fn expect_fields(path: &Path, line: usize, fields: &[String], n: usize) -> Result<()> {
    if fields.len() != n {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("expected {n} tab-separated fields, found {}", fields.len()),
        });
    }
    Ok(())
}

/// `query_id \t doc_id \t grade`
pub fn load_qrels(path: impl AsRef<Path>) -> Result<Qrels> {
    let path = path.as_ref();
    let mut qrels = Qrels::new();
    let mut issues = Vec::new();
    for (line, f) in tsv_lines(path)? {
        expect_fields(path, line, &f, 3)?;
        let grade: u32 = parse_field(path, line, "grade", &f[2])?;
        let prev = qrels
            .entry(f[0].clone())
            .or_default()
            .insert(f[1].clone(), grade);
        if prev.is_some() {
            issues.push(format!("line {line}: duplicate judgment ({}, {})", f[0], f[1]));
        }
    }
    if !issues.is_empty() {
        return Err(Error::Validation(issues));
    }
    Ok(qrels)
}

/// `query_id \t doc_id \t rank \t score`. Entries are ordered by rank, then
/// by descending score, then by doc id.
pub fn load_run(path: impl AsRef<Path>) -> Result<Run> {
    let path = path.as_ref();
    let mut run = Run::new();
    for (line, f) in tsv_lines(path)? {
        expect_fields(path, line, &f, 4)?;
        let rank: u32 = parse_field(path, line, "rank", &f[2])?;
        let score: f64 = parse_field(path, line, "score", &f[3])?;
        if !score.is_finite() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("score {:?} is not finite", f[3]),
            });
        }
        run.entry(f[0].clone()).or_default().push(RunEntry {
            doc_id: f[1].clone(),
            rank,
            score,
        });
    }
    for entries in run.values_mut() {
        entries.sort_by(|a, b| {
            a.rank
                .cmp(&b.rank)
                .then(b.score.total_cmp(&a.score))
                .then_with(|| a.doc_id.cmp(&b.doc_id))
        });
    }
    Ok(run)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NdcgEvaluation {
    pub k: usize,
    pub per_query: Vec<(String, f64)>,
    pub mean: f64,
}

/// Evaluates every query that appears in both the run and the qrels.
pub fn evaluate_run(qrels: &Qrels, run: &Run, k: usize) -> Result<NdcgEvaluation> {
    let mut per_query = Vec::new();
    for (qid, entries) in run {
        let Some(rels) = qrels.get(qid) else { continue };
        let ids: Vec<&str> = entries.iter().map(|e| e.doc_id.as_str()).collect();
        per_query.push((qid.clone(), ndcg_at_k(&ids, rels, k)?));
    }
    if per_query.is_empty() {
        return Err(Error::domain("no query appears in both run and qrels"));
    }
    let mean = per_query.iter().map(|(_, v)| v).sum::<f64>() / per_query.len() as f64;
    Ok(NdcgEvaluation { k, per_query, mean })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownstreamRecord {
    pub method: String,
    pub dataset: String,
    pub ndcg_at_10: f64,
}

/// `method \t dataset \t ndcg10`, with an optional header line.
pub fn load_downstream(path: impl AsRef<Path>) -> Result<Vec<DownstreamRecord>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    let mut issues = Vec::new();
    for (line, f) in tsv_lines(path)? {
        if line == 1 && f.first().map(String::as_str) == Some("method") {
            continue;
        }
        expect_fields(path, line, &f, 3)?;
        let v: f64 = parse_field(path, line, "nDCG", &f[2])?;
        if !(0.0..=1.0).contains(&v) {
            issues.push(format!("line {line}: nDCG {v} outside [0, 1]"));
        }
        out.push(DownstreamRecord {
            method: f[0].clone(),
            dataset: f[1].clone(),
            ndcg_at_10: v,
        });
    }
    if !issues.is_empty() {
        return Err(Error::Validation(issues));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub metric: String,
    pub pearson_r: f64,
    pub n_points: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTable {
    /// Methods present in both inputs, in sorted order.
    pub methods: Vec<String>,
    pub rows: Vec<CorrelationRow>,
    /// Metrics whose correlation could not be computed, with the reason.
    #[serde(default)]
    pub undefined: Vec<(String, String)>,
}

impl CorrelationTable {
    pub fn get(&self, metric: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.metric == metric).map(|r| r.pearson_r)
    }
}

pub const CORRELATED_METRICS: [&str; 5] = [
    "eci",
    "mean_signal",
    "grad_norm_est",
    "score_var_est",
    "arithmetic_score",
];

fn metric_value(r: &EciReport, metric: &str) -> Option<f64> {
    match metric {
        "eci" => Some(r.eci),
        "mean_signal" => Some(r.signal),
        "grad_norm_est" => Some(r.grad_norm_est),
        "score_var_est" => r.score_var_est,
        "arithmetic_score" => Some(r.arithmetic_score),
        _ => None,
    }
}

/// Correlates each intrinsic metric against downstream nDCG averaged per
/// method across datasets.
pub fn correlate_reports(reports: &[EciReport], downstream: &[DownstreamRecord]) -> Result<CorrelationTable> {
    let mut per_method: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for d in downstream {
        let e = per_method.entry(&d.method).or_default();
        e.0 += d.ndcg_at_10;
        e.1 += 1;
    }
    let by_method: HashMap<&str, &EciReport> = reports.iter().map(|r| (r.method.as_str(), r)).collect();
    let shared: Vec<(&str, f64)> = per_method
        .iter()
        .filter(|(m, _)| by_method.contains_key(*m))
        .map(|(m, (sum, n))| (*m, sum / *n as f64))
        .collect();
    if shared.len() < 2 {
        return Err(Error::domain(format!(
            "need at least 2 methods present in both reports and downstream scores, found {}",
            shared.len()
        )));
    }
    let targets: Vec<f64> = shared.iter().map(|(_, v)| *v).collect();

    let mut table = CorrelationTable {
        methods: shared.iter().map(|(m, _)| m.to_string()).collect(),
        ..Default::default()
    };
    for metric in CORRELATED_METRICS {
        let xs: Option<Vec<f64>> = shared
            .iter()
            .map(|(m, _)| metric_value(by_method[m], metric))
            .collect();
        let Some(xs) = xs else {
            table
                .undefined
                .push((metric.to_string(), "missing for some methods".to_string()));
            continue;
        };
        match pearson_r(&xs, &targets) {
            Ok(r) => table.rows.push(CorrelationRow {
                metric: metric.to_string(),
                pearson_r: r,
                n_points: xs.len(),
            }),
            Err(Error::Domain(reason)) => table.undefined.push((metric.to_string(), reason)),
            Err(e) => return Err(e),
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Tsv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tsv" => Ok(ReportFormat::Tsv),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            other => Err(Error::Config(format!("unknown report format {other:?}"))),
        }
    }
}

pub const REPORT_TSV_HEADER: &str =
    "method\tn\tsignal\tmargin\tcapacity\tharmonic_eff\teci\tarithmetic\tgrad_norm_est\tscore_var_est";

fn strength(r: f64) -> &'static str {
    match r.abs() {
        a if a >= 0.9 => "Very Strong",
        a if a >= 0.7 => "Strong",
        a if a >= 0.4 => "Moderate",
        a if a >= 0.2 => "Weak",
        _ => "Negligible",
    }
}

/// Renders the ECI table (and the correlation table when given) as a
/// deterministic document.
pub fn render_report(
    reports: &[EciReport],
    correlations: Option<&CorrelationTable>,
    format: ReportFormat,
) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::domain("nothing to report"));
    }
    let corr = correlations.filter(|c| !c.rows.is_empty());
    let mut out = String::new();
    match format {
        ReportFormat::Tsv => {
            out.push_str(REPORT_TSV_HEADER);
            out.push('\n');
            for r in reports {
                out.push_str(&report_tsv_row(r));
                out.push('\n');
            }
            out.push('\n');
            match corr {
                Some(c) => {
                    out.push_str("metric\tpearson_r\tn_points\n");
                    for row in &c.rows {
                        let _ = writeln!(out, "{}\t{:.6}\t{}", row.metric, row.pearson_r, row.n_points);
                    }
                }
                None => out.push_str("# no correlation data\n"),
            }
        }
        ReportFormat::Markdown => {
            out.push_str("## ECI\n\n");
            out.push_str("| Name | Top-k (\\|N\\|) | Signal (S_n) | Max-Margin (Δ) | Harmonic Eff. | ECI | Arithmetic |\n");
            out.push_str("|---|---:|---:|---:|---:|---:|---:|\n");
            for r in reports {
                let _ = writeln!(
                    out,
                    "| {} | {} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} |",
                    r.method,
                    fmt_n(r.n_effective),
                    r.signal,
                    r.margin,
                    r.harmonic_eff,
                    r.eci,
                    r.arithmetic_score
                );
            }
            out.push('\n');
            match corr {
                Some(c) => {
                    out.push_str("## Correlation with downstream nDCG@10\n\n");
                    out.push_str("| Metric | Pearson r | Interpretation | Direction | Points |\n");
                    out.push_str("|---|---:|---|---|---:|\n");
                    for row in &c.rows {
                        let dir = if row.pearson_r >= 0.0 { "Positive" } else { "Negative" };
                        let _ = writeln!(
                            out,
                            "| {} | {:.2} | {} | {} | {} |",
                            row.metric,
                            row.pearson_r,
                            strength(row.pearson_r),
                            dir,
                            row.n_points
                        );
                    }
                }
                None => out.push_str("_No correlation data._\n"),
            }
        }
    }
    Ok(out)
}

fn fmt_n(n: f64) -> String {
    if n.fract() == 0.0 {
        format!("{n:.0}")
    } else {
        format!("{n:.2}")
    }
}

/// One row of the fixed-column report TSV.
pub fn report_tsv_row(r: &EciReport) -> String {
    let var = r
        .score_var_est
        .map(|v| format!("{v:.6}"))
        .unwrap_or_else(|| "NA".to_string());
    format!(
        "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}",
        r.method,
        r.n_effective,
        r.signal,
        r.margin,
        r.capacity,
        r.harmonic_eff,
        r.eci,
        r.arithmetic_score,
        r.grad_norm_est,
        var
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eci::{build_report, DEFAULT_TEMPERATURE};
    use crate::similarity::MethodSummary;
    use approx::assert_abs_diff_eq;

    #[test]
    fn pearson_closed_forms() {
        let xs = [0.3, 1.0, 2.5, 4.0];
        let lin: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert_abs_diff_eq!(pearson_r(&xs, &lin).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pearson_r(&xs, &neg).unwrap(), -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pearson_r(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap(), 0.5, epsilon = 1e-9);
    }

    #[test]
    fn pearson_errors() {
        assert!(pearson_r(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(pearson_r(&[1.0], &[1.0]).is_err());
        assert!(pearson_r(&[1.0, 2.0], &[1.0]).is_err());
    }

    fn rels(pairs: &[(&str, u32)]) -> HashMap<String, u32> {
        pairs.iter().map(|(d, g)| (d.to_string(), *g)).collect()
    }

    #[test]
    fn ndcg_closed_forms() {
        let r = rels(&[("a", 1)]);
        assert_eq!(ndcg_at_k(&["a", "b", "c"], &r, 10).unwrap(), 1.0);
        assert_abs_diff_eq!(ndcg_at_k(&["b", "a"], &r, 10).unwrap(), 0.6309, epsilon = 1e-4);
        assert_eq!(ndcg_at_k(&["x", "y"], &r, 10).unwrap(), 0.0);
        assert_eq!(ndcg_at_k(&["a"], &rels(&[("a", 0)]), 10).unwrap(), 0.0);
        assert!(ndcg_at_k(&["a"], &r, 0).is_err());
    }

    #[test]
    fn ndcg_counts_repeats_once() {
        let r = rels(&[("a", 1), ("b", 1)]);
        assert_eq!(
            ndcg_at_k(&["a", "a", "b"], &r, 10).unwrap(),
            ndcg_at_k(&["a", "b"], &r, 10).unwrap()
        );
    }

    fn report(method: &str, n: f64, s: f64, m: f64) -> EciReport {
        build_report(&MethodSummary::from_aggregates(method, n, s, m), DEFAULT_TEMPERATURE, None).unwrap()
    }

    fn down(method: &str, v: f64) -> DownstreamRecord {
        DownstreamRecord {
            method: method.into(),
            dataset: "d".into(),
            ndcg_at_10: v,
        }
    }

    #[test]
    fn correlation_needs_two_methods() {
        let reps = [report("a", 10.0, 0.5, 0.2)];
        assert!(correlate_reports(&reps, &[down("a", 0.3)]).is_err());
    }

    #[test]
    fn two_methods_give_unit_correlation() {
        let reps = [report("a", 10.0, 0.5, 0.2), report("b", 20.0, 0.6, 0.3)];
        let t = correlate_reports(&reps, &[down("a", 0.3), down("b", 0.2)]).unwrap();
        for row in &t.rows {
            assert!((row.pearson_r.abs() - 1.0).abs() < 1e-12);
        }
        assert_eq!(t.undefined.len(), 1);
        assert_eq!(t.undefined[0].0, "score_var_est");
    }

    #[test]
    fn downstream_averaged_per_method() {
        let reps = [
            report("a", 10.0, 0.5, 0.2),
            report("b", 20.0, 0.5, 0.2),
            report("c", 40.0, 0.5, 0.2),
        ];
        // a→0.2, b→0.4, c→0.6 after averaging; eci grows with n but not linearly
        let d = [
            down("a", 0.1),
            down("a", 0.3),
            down("b", 0.4),
            down("c", 0.5),
            down("c", 0.7),
            down("zzz", 0.9),
        ];
        let t = correlate_reports(&reps, &d).unwrap();
        assert_eq!(t.methods, ["a", "b", "c"]);
        let xs: Vec<f64> = reps.iter().map(|r| r.eci).collect();
        assert_abs_diff_eq!(t.get("eci").unwrap(), pearson_r(&xs, &[0.2, 0.4, 0.6]).unwrap(), epsilon = 1e-12);
        assert!(t.undefined.iter().any(|(m, _)| m == "mean_signal"));
    }

    #[test]
    fn render_formats() {
        let reps = [report("a", 10.0, 0.5, 0.2), report("b", 20.0, 0.6, 0.3)];
        let tsv = render_report(&reps, None, ReportFormat::Tsv).unwrap();
        assert_eq!(tsv.lines().next().unwrap(), REPORT_TSV_HEADER);
        assert!(tsv.contains("# no correlation data"));
        let md = render_report(&reps, None, ReportFormat::Markdown).unwrap();
        assert!(md.contains("_No correlation data._"));
        assert_eq!(md, render_report(&reps, None, ReportFormat::Markdown).unwrap());
        assert!(render_report(&[], None, ReportFormat::Tsv).is_err());
        assert!("pdf".parse::<ReportFormat>().is_err());
    }
}
