//! Hybrid negative sets: per-query concatenation of several mining methods,
//! and fixed-size truncation.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Negative, TripletSet};
use crate::error::{Error, Result};
use crate::similarity::SimilaritySource;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DedupPolicy {
    /// A doc id seen in an earlier source is dropped from later ones.
    #[default]
    KeepFirst,
    /// Any doc id shared between sources is an error.
    Reject,
    /// Plain concatenation; duplicates are kept.
    KeepAll,
}

impl std::str::FromStr for DedupPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "keep_first" => Ok(DedupPolicy::KeepFirst),
            "reject" => Ok(DedupPolicy::Reject),
            "keep_all" | "none" => Ok(DedupPolicy::KeepAll),
            other => Err(Error::Config(format!("unknown dedup policy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompositionPlan {
    pub name: String,
    pub sources: Vec<String>,
    #[serde(default)]
    pub dedup: DedupPolicy,
}

impl CompositionPlan {
    pub fn new(name: impl Into<String>, sources: &[&str]) -> Self {
        CompositionPlan {
            name: name.into(),
            sources: sources.iter().map(|s| s.to_string()).collect(),
            dedup: DedupPolicy::default(),
        }
    }
}

#[derive(Deserialize)]
struct PlanFile {
    #[serde(default)]
    plan: Vec<CompositionPlan>,
}

/// Parses plans from TOML:
///
/// ```toml
/// [[plan]]
/// name = "bm25+ce"
/// sources = ["bm25", "ce"]
/// dedup = "keep_first"   # optional
/// ```
pub fn parse_plans(text: &str) -> Result<Vec<CompositionPlan>> {
    let file: PlanFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let mut issues = Vec::new();
    let mut names = HashSet::new();
    for p in &file.plan {
        if p.sources.is_empty() {
            issues.push(format!("plan {:?} has no sources", p.name));
        }
        if !names.insert(p.name.as_str()) {
            issues.push(format!("plan name {:?} used twice", p.name));
        }
    }
    if !issues.is_empty() {
        return Err(Error::Config(issues.join("; ")));
    }
    Ok(file.plan)
}

pub fn load_plans(path: impl AsRef<Path>) -> Result<Vec<CompositionPlan>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_plans(&text)
}

#[derive(Debug, Clone, Default)]
pub struct Composition {
    pub triplets: Vec<TripletSet>,
    /// Queries missing from at least one source; emitted with what exists.
    pub coverage_mismatches: usize,
    /// Negatives before deduplication (the naive concatenation count).
    pub concatenated_negatives: usize,
    /// Cross-source duplicates encountered.
    pub duplicates: usize,
}

/// Concatenates each query's negatives across `plan.sources`, in source
/// order. Positives are the union of the sources' positives.
pub fn compose(
    plan: &CompositionPlan,
    per_method: &BTreeMap<String, Vec<TripletSet>>,
) -> Result<Composition> {
    let unknown: Vec<&str> = plan
        .sources
        .iter()
        .filter(|s| !per_method.contains_key(*s))
        .map(String::as_str)
        .collect();
    if !unknown.is_empty() {
        return Err(Error::Config(format!(
            "plan {:?} references unknown sources: {}",
            plan.name,
            unknown.join(", ")
        )));
    }
    if plan.sources.is_empty() {
        return Err(Error::Config(format!("plan {:?} has no sources", plan.name)));
    }

    let lookups: Vec<HashMap<&str, &TripletSet>> = plan
        .sources
        .iter()
        .map(|s| {
            per_method[s]
                .iter()
                .map(|t| (t.query_id.as_str(), t))
                .collect()
        })
        .collect();

    let mut order: Vec<&str> = Vec::new();
    let mut seen = HashSet::new();
    for src in &plan.sources {
        for t in &per_method[src] {
            if seen.insert(t.query_id.as_str()) {
                order.push(&t.query_id);
            }
        }
    }

    let mut out = Composition::default();
    let mut issues = Vec::new();
    let mut any_common = false;
    for qid in order {
        let parts: Vec<&TripletSet> = lookups.iter().filter_map(|m| m.get(qid).copied()).collect();
        if parts.len() == lookups.len() {
            any_common = true;
        } else {
            out.coverage_mismatches += 1;
        }

        let mut positives: Vec<String> = Vec::new();
        for p in parts.iter().flat_map(|t| &t.positive_ids) {
            if !positives.contains(p) {
                positives.push(p.clone());
            }
        }

        let mut negatives: Vec<Negative> = Vec::new();
        let mut taken: HashSet<&str> = HashSet::new();
        for part in &parts {
            let mut local: HashSet<&str> = HashSet::new();
            for neg in &part.negatives {
                out.concatenated_negatives += 1;
                local.insert(&neg.doc_id);
                if taken.contains(neg.doc_id.as_str()) {
                    out.duplicates += 1;
                    match plan.dedup {
                        DedupPolicy::KeepFirst => continue,
                        DedupPolicy::Reject => {
                            issues.push(format!("duplicate negative ({qid}, {})", neg.doc_id));
                            continue;
                        }
                        DedupPolicy::KeepAll => {}
                    }
                }
                negatives.push(neg.clone());
            }
            taken.extend(local);
        }

        let composed = TripletSet {
            query_id: qid.to_string(),
            positive_ids: positives,
            negatives,
        };
        issues.extend(composed.violations(plan.dedup == DedupPolicy::KeepAll));
        out.triplets.push(composed);
    }

    if !issues.is_empty() {
        return Err(Error::Validation(issues));
    }
    if !any_common && !out.triplets.is_empty() {
        return Err(Error::domain(format!(
            "plan {:?}: no query is present in every source",
            plan.name
        )));
    }
    Ok(out)
}

/// Keeps the first `n` negatives of every query.
pub fn truncate(triplets: &[TripletSet], n: usize) -> Result<Vec<TripletSet>> {
    if n == 0 {
        return Err(Error::domain("truncation size must be >= 1"));
    }
    Ok(triplets
        .iter()
        .map(|t| TripletSet {
            negatives: t.negatives.iter().take(n).cloned().collect(),
            ..t.clone()
        })
        .collect())
}

/// Keeps the `n` negatives most similar to the query according to `source`,
/// in descending similarity. Ties keep their original relative order.
pub fn truncate_by_similarity(
    triplets: &[TripletSet],
    n: usize,
    source: &dyn SimilaritySource,
) -> Result<Vec<TripletSet>> {
    if n == 0 {
        return Err(Error::domain("truncation size must be >= 1"));
    }
    triplets
        .iter()
        .map(|t| {
            let (_, sims) = source.similarities(t)?;
            let mut ranked: Vec<(f64, &Negative)> = sims.into_iter().zip(&t.negatives).collect();
            ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
            Ok(TripletSet {
                negatives: ranked.into_iter().take(n).map(|(_, neg)| neg.clone()).collect(),
                ..t.clone()
            })
        })
        .collect()
}
