//! Per-query similarity statistics and their dataset-level aggregates.
//!
//! For one query with positives `P` and negatives `N`:
//!
//! * `signal` is the mean query/negative similarity,
//! * `max_sim_p` / `max_sim_n` are the best positive and hardest negative,
//! * `raw_margin = max_sim_p - max_sim_n`, and `safe_margin` clamps it at 0.
//!
//! Similarities come either from embeddings (cosine) or from an external
//! score file; both paths feed [`stats_from_similarities`].

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{EmbeddingMatrix, ScoreEntry, ScoreFile, TripletSet};
use crate::error::{Error, Result};

/// Cosine similarity accumulated in f64 and clipped to `[-1, 1]`.
pub fn cosine<T: Copy + Into<f64>>(u: &[T], v: &[T]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape {
            expected: u.len(),
            found: v.len(),
        });
    }
    let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b): (f64, f64) = (a.into(), b.into());
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::domain("cosine of a zero-norm vector"));
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerQueryStats {
    pub query_id: String,
    pub n_count: usize,
    /// Mean query/negative similarity; absent when there are no negatives.
    pub signal: Option<f64>,
    pub max_sim_p: f64,
    pub max_sim_n: Option<f64>,
    pub raw_margin: Option<f64>,
    pub safe_margin: Option<f64>,
}

impl PerQueryStats {
    pub fn has_negatives(&self) -> bool {
        self.n_count > 0
    }
}

fn max_of(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Builds the statistics from raw similarity values.
///
/// The negative mean is summed in sorted order so the result does not depend
/// on the order negatives are listed in.
pub fn stats_from_similarities(
    query_id: &str,
    positive_sims: &[f64],
    negative_sims: &[f64],
) -> Result<PerQueryStats> {
    if positive_sims.is_empty() {
        return Err(Error::domain(format!("query {query_id:?} has no positives")));
    }
    if let Some(bad) = positive_sims
        .iter()
        .chain(negative_sims)
        .find(|x| !x.is_finite())
    {
        return Err(Error::domain(format!(
            "query {query_id:?} has non-finite similarity {bad}"
        )));
    }
    let max_sim_p = max_of(positive_sims);
    let n_count = negative_sims.len();
    if n_count == 0 {
        return Ok(PerQueryStats {
            query_id: query_id.to_string(),
            n_count,
            signal: None,
            max_sim_p,
            max_sim_n: None,
            raw_margin: None,
            safe_margin: None,
        });
    }
    let mut sorted = negative_sims.to_vec();
    sorted.sort_by(f64::total_cmp);
    let signal = sorted.iter().sum::<f64>() / n_count as f64;
    let max_sim_n = *sorted.last().unwrap();
    let raw = max_sim_p - max_sim_n;
    Ok(PerQueryStats {
        query_id: query_id.to_string(),
        n_count,
        signal: Some(signal),
        max_sim_p,
        max_sim_n: Some(max_sim_n),
        raw_margin: Some(raw),
        safe_margin: Some(raw.max(0.0)),
    })
}

/// Statistics for one query from its embedding and those of its documents.
pub fn per_query_stats<T: Copy + Into<f64>>(
    query_id: &str,
    query: &[T],
    positives: &[&[T]],
    negatives: &[&[T]],
) -> Result<PerQueryStats> {
    let pos = positives
        .iter()
        .map(|p| cosine(query, p))
        .collect::<Result<Vec<_>>>()?;
    let neg = negatives
        .iter()
        .map(|n| cosine(query, n))
        .collect::<Result<Vec<_>>>()?;
    stats_from_similarities(query_id, &pos, &neg)
}

/// Statistics for one triplet using externally supplied scores in place of
/// cosine similarity. Every missing (query, doc) pair is reported.
pub fn per_query_stats_from_scores(scores: &ScoreFile, triplet: &TripletSet) -> Result<PerQueryStats> {
    scores.stats(triplet)
}

/// Where per-pair similarities come from.
pub trait SimilaritySource: Sync {
    /// Similarities of (positives, negatives) to the triplet's query.
    fn similarities(&self, triplet: &TripletSet) -> Result<(Vec<f64>, Vec<f64>)>;

    fn stats(&self, triplet: &TripletSet) -> Result<PerQueryStats> {
        let (pos, neg) = self.similarities(triplet)?;
        stats_from_similarities(&triplet.query_id, &pos, &neg)
    }
}

impl SimilaritySource for ScoreFile {
    fn similarities(&self, triplet: &TripletSet) -> Result<(Vec<f64>, Vec<f64>)> {
        let q = &triplet.query_id;
        let mut missing = Vec::new();
        let mut lookup = |doc: &str| {
            self.get(q, doc).unwrap_or_else(|| {
                missing.push(format!("({q}, {doc})"));
                f64::NAN
            })
        };
        let pos = triplet.positive_ids.iter().map(|d| lookup(d)).collect();
        let neg = triplet.negatives.iter().map(|n| lookup(&n.doc_id)).collect();
        if missing.is_empty() {
            Ok((pos, neg))
        } else {
            Err(Error::Lookup {
                what: "scores",
                missing,
            })
        }
    }
}

/// Cosine similarities from query and document embedding tables. The two
/// tables may be the same matrix.
pub struct EmbeddingSource<'a> {
    pub queries: &'a EmbeddingMatrix,
    pub docs: &'a EmbeddingMatrix,
}

impl SimilaritySource for EmbeddingSource<'_> {
    fn similarities(&self, triplet: &TripletSet) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut missing = Vec::new();
        let q = self.queries.get(&triplet.query_id);
        if q.is_none() {
            missing.push(format!("query {}", triplet.query_id));
        }
        let docs: Vec<Option<&[f32]>> = triplet
            .positive_ids
            .iter()
            .chain(triplet.negatives.iter().map(|n| &n.doc_id))
            .map(|d| {
                let row = self.docs.get(d);
                if row.is_none() {
                    missing.push(format!("doc {d}"));
                }
                row
            })
            .collect();
        if !missing.is_empty() {
            return Err(Error::Lookup {
                what: "embedding ids",
                missing,
            });
        }
        let q = q.unwrap();
        let sims = docs
            .into_iter()
            .map(|d| cosine(q, d.unwrap()))
            .collect::<Result<Vec<_>>>()?;
        let split = triplet.positive_ids.len();
        let neg = sims[split..].to_vec();
        let mut pos = sims;
        pos.truncate(split);
        Ok((pos, neg))
    }
}

/// Computes stats for every triplet in parallel. The output is sorted by
/// query id so downstream sums happen in a fixed order regardless of thread
/// count. Lookup failures across queries are merged into one error.
pub fn batch_stats(triplets: &[TripletSet], source: &dyn SimilaritySource) -> Result<Vec<PerQueryStats>> {
    let results: Vec<Result<PerQueryStats>> = triplets.par_iter().map(|t| source.stats(t)).collect();
    let mut stats = Vec::with_capacity(results.len());
    let mut missing = Vec::new();
    let mut what = "";
    for r in results {
        match r {
            Ok(s) => stats.push(s),
            Err(Error::Lookup { what: w, missing: m }) => {
                what = w;
                missing.extend(m);
            }
            Err(e) => return Err(e),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Lookup { what, missing });
    }
    stats.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    Ok(stats)
}

/// All (query, doc) similarities a source produces for `triplets`, in a
/// form that can be written as a score file.
pub fn export_similarities(
    triplets: &[TripletSet],
    source: &dyn SimilaritySource,
) -> Result<Vec<ScoreEntry>> {
    let mut out = Vec::new();
    for t in triplets {
        let (pos, neg) = source.similarities(t)?;
        let ids = t
            .positive_ids
            .iter()
            .chain(t.negatives.iter().map(|n| &n.doc_id));
        for (doc, score) in ids.zip(pos.into_iter().chain(neg)) {
            out.push(ScoreEntry {
                query_id: t.query_id.clone(),
                doc_id: doc.clone(),
                score,
            });
        }
    }
    Ok(out)
}

/// Dataset-level aggregates for one negative-mining method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub query_count: usize,
    /// Queries that ended up with no negatives. They count towards
    /// `mean_n` but not towards the similarity means.
    #[serde(default)]
    pub empty_queries: usize,
    pub mean_n: f64,
    pub mean_signal: f64,
    /// Mean of per-query clamped margins.
    pub mean_margin: f64,
    /// Mean of per-query unclamped margins, for reference.
    #[serde(default)]
    pub mean_raw_margin: Option<f64>,
    /// Mean of per-query hardest-negative similarity.
    #[serde(default)]
    pub s_max: Option<f64>,
}

impl MethodSummary {
    /// A summary built from already-aggregated values.
    pub fn from_aggregates(method: impl Into<String>, mean_n: f64, mean_signal: f64, mean_margin: f64) -> Self {
        MethodSummary {
            method: method.into(),
            query_count: 1,
            empty_queries: 0,
            mean_n,
            mean_signal,
            mean_margin,
            mean_raw_margin: None,
            s_max: None,
        }
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    sum / n as f64
}

pub fn summarize_method(stats: &[PerQueryStats], method: &str) -> Result<MethodSummary> {
    if stats.is_empty() {
        return Err(Error::domain(format!("no queries to summarize for {method:?}")));
    }
    let mut ordered: Vec<&PerQueryStats> = stats.iter().collect();
    ordered.sort_by(|a, b| match a.query_id.cmp(&b.query_id) {
        Ordering::Equal => a.n_count.cmp(&b.n_count),
        o => o,
    });
    let with_negs: Vec<&PerQueryStats> = ordered.iter().copied().filter(|s| s.has_negatives()).collect();
    if with_negs.is_empty() {
        return Err(Error::domain(format!(
            "every query for {method:?} has zero negatives"
        )));
    }
    Ok(MethodSummary {
        method: method.to_string(),
        query_count: ordered.len(),
        empty_queries: ordered.len() - with_negs.len(),
        mean_n: mean(ordered.iter().map(|s| s.n_count as f64)),
        mean_signal: mean(with_negs.iter().map(|s| s.signal.unwrap())),
        mean_margin: mean(with_negs.iter().map(|s| s.safe_margin.unwrap())),
        mean_raw_margin: Some(mean(with_negs.iter().map(|s| s.raw_margin.unwrap()))),
        s_max: Some(mean(with_negs.iter().map(|s| s.max_sim_n.unwrap()))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Negative;
    use approx::assert_abs_diff_eq;

    #[test]
    fn cosine_basics() {
        let v = [0.3f64, -2.0, 5.0];
        assert_abs_diff_eq!(cosine(&v, &v).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(cosine(&[1.0f64, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            cosine(&[1.0f64, 1.0], &[1.0, 0.0]).unwrap(),
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-12
        );
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(cosine(&[0.0f64, 0.0], &[1.0, 0.0]), Err(Error::Domain(_))));
        assert!(matches!(cosine(&[1.0f64], &[1.0, 0.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn two_negative_example() {
        let s = stats_from_similarities("q", &[0.9], &[0.5, 0.7]).unwrap();
        assert_abs_diff_eq!(s.signal.unwrap(), 0.6, epsilon = 1e-12);
        assert_eq!(s.max_sim_n, Some(0.7));
        assert_abs_diff_eq!(s.raw_margin.unwrap(), 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(s.safe_margin.unwrap(), 0.2, epsilon = 1e-12);
    }

    #[test]
    fn violated_boundary_clamps() {
        let s = stats_from_similarities("q", &[0.6], &[0.8]).unwrap();
        assert_abs_diff_eq!(s.raw_margin.unwrap(), -0.2, epsilon = 1e-12);
        assert_eq!(s.safe_margin, Some(0.0));
    }

    #[test]
    fn no_positives_is_domain_error() {
        assert!(matches!(
            stats_from_similarities("q", &[], &[0.1]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn empty_negatives_flagged_absent() {
        let s = stats_from_similarities("q", &[0.4, 0.9], &[]).unwrap();
        assert_eq!(s.n_count, 0);
        assert_eq!(s.max_sim_p, 0.9);
        assert!(s.signal.is_none() && s.safe_margin.is_none());
    }

    fn triplet(negs: &[&str]) -> TripletSet {
        TripletSet {
            query_id: "q1".into(),
            positive_ids: vec!["p".into()],
            negatives: negs.iter().map(|d| Negative::new(*d, "ce")).collect(),
        }
    }

    #[test]
    fn score_path_matches_embedding_example() {
        let scores = ScoreFile::from_entries(vec![
            ScoreEntry { query_id: "q1".into(), doc_id: "p".into(), score: 0.9 },
            ScoreEntry { query_id: "q1".into(), doc_id: "a".into(), score: 0.5 },
            ScoreEntry { query_id: "q1".into(), doc_id: "b".into(), score: 0.7 },
        ])
        .unwrap();
        let from_scores = per_query_stats_from_scores(&scores, &triplet(&["a", "b"])).unwrap();
        let direct = stats_from_similarities("q1", &[0.9], &[0.5, 0.7]).unwrap();
        assert_eq!(from_scores, direct);
        assert_eq!(scores.stats(&triplet(&["a", "b"])).unwrap(), direct);

        match per_query_stats_from_scores(&scores, &triplet(&["a", "zz"])).unwrap_err() {
            Error::Lookup { missing, .. } => assert_eq!(missing, vec!["(q1, zz)"]),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn summary_of_two() {
        let a = stats_from_similarities("a", &[0.9], &[0.5]).unwrap();
        let b = stats_from_similarities("b", &[0.9], &[0.7]).unwrap();
        let s = summarize_method(&[a, b], "m").unwrap();
        assert_abs_diff_eq!(s.mean_signal, 0.6, epsilon = 1e-12);
        assert_eq!(s.mean_n, 1.0);
    }

    #[test]
    fn summary_of_one_equals_stats() {
        let a = stats_from_similarities("a", &[0.9], &[0.5, 0.95, 0.3]).unwrap();
        let s = summarize_method(std::slice::from_ref(&a), "m").unwrap();
        assert_eq!(s.query_count, 1);
        assert_eq!(s.mean_signal, a.signal.unwrap());
        assert_eq!(s.mean_margin, a.safe_margin.unwrap());
        assert_eq!(s.mean_raw_margin, a.raw_margin);
        assert_eq!(s.s_max, a.max_sim_n);
        assert_eq!(s.mean_n, 3.0);
    }

    #[test]
    fn summary_excludes_empty_queries() {
        let a = stats_from_similarities("a", &[0.9], &[0.5]).unwrap();
        let b = stats_from_similarities("b", &[0.9], &[]).unwrap();
        let s = summarize_method(&[a, b.clone()], "m").unwrap();
        assert_eq!(s.empty_queries, 1);
        assert_eq!(s.mean_signal, 0.5);
        assert_eq!(s.mean_n, 0.5);
        assert!(summarize_method(&[b], "m").is_err());
        assert!(summarize_method(&[], "m").is_err());
    }
}
