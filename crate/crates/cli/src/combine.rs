use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use hardneg_core::dataset::{load_triplets, save_triplets};
use hardneg_core::hybrid::{load_plans, truncate_by_similarity};
use hardneg_core::similarity::SimilaritySource;
use hardneg_core::{compose, truncate, CompositionPlan, DedupPolicy, Error, TripletSet};
use serde::Serialize;

use crate::manifest::RunManifest;
use crate::output::{file_safe, tagged_paths, Output};
use crate::source::{self, SourceArgs};

#[derive(Debug, Args)]
pub struct CombineArgs {
    /// Negative set per method, as TAG=PATH (repeatable).
    #[arg(long = "input", value_name = "TAG=PATH", required = true)]
    pub inputs: Vec<String>,
    /// TOML file with `[[plan]]` tables (`name`, `sources`, optional `dedup`).
    /// Without it every input is passed through on its own.
    #[arg(long)]
    pub plans: Option<PathBuf>,
    /// Run only the named plan (repeatable). Default: every plan.
    #[arg(long = "plan", value_name = "NAME")]
    pub plan: Vec<String>,
    /// Override the dedup policy of every plan: keep_first, reject, keep_all.
    #[arg(long)]
    pub dedup: Option<DedupPolicy>,
    /// Keep only the first N negatives of every query after composition.
    #[arg(long, value_name = "N")]
    pub truncate: Option<usize>,
    /// With --truncate, keep the N most similar negatives instead of the
    /// first N. Needs --embeddings or --scores.
    #[arg(long, requires = "truncate")]
    pub rerank_by_sim: bool,
    #[command(flatten)]
    pub source: SourceArgs,
}

#[derive(Serialize)]
struct PlanOutcome {
    name: String,
    sources: Vec<String>,
    dedup: DedupPolicy,
    file: String,
    queries: usize,
    negatives: usize,
    concatenated_negatives: usize,
    duplicates: usize,
    coverage_mismatches: usize,
}

fn select_plans(args: &CombineArgs, tags: &[String], manifest: &mut RunManifest) -> Result<Vec<CompositionPlan>> {
    let mut plans = match &args.plans {
        Some(p) => {
            manifest.input("plans", p)?;
            let all = load_plans(p)?;
            if args.plan.is_empty() {
                all
            } else {
                let unknown: Vec<&str> = args
                    .plan
                    .iter()
                    .filter(|n| !all.iter().any(|p| &p.name == *n))
                    .map(String::as_str)
                    .collect();
                if !unknown.is_empty() {
                    return Err(Error::Config(format!("unknown plan(s): {}", unknown.join(", "))).into());
                }
                all.into_iter().filter(|p| args.plan.contains(&p.name)).collect()
            }
        }
        None if !args.plan.is_empty() => {
            return Err(Error::Config("--plan needs --plans".into()).into());
        }
        None => tags.iter().map(|t| CompositionPlan::new(t.clone(), &[t.as_str()])).collect(),
    };
    if let Some(d) = args.dedup {
        for p in &mut plans {
            p.dedup = d;
        }
    }
    Ok(plans)
}

pub fn run(args: &CombineArgs, out: &mut Output, manifest: &mut RunManifest) -> Result<()> {
    manifest.param("truncate", args.truncate);
    manifest.param("rerank_by_sim", args.rerank_by_sim);
    manifest.param("dedup_override", args.dedup);
    if args.truncate == Some(0) {
        return Err(Error::Domain("--truncate must be >= 1".into()).into());
    }
    let inputs = tagged_paths(&args.inputs)?;
    let tags: Vec<String> = inputs.iter().map(|(t, _)| t.clone()).collect();
    let plans = select_plans(args, &tags, manifest)?;
    manifest.param("plans", &plans);
    for p in &plans {
        file_safe(&p.name)?;
    }

    let loaded = source::load(&args.source, manifest)?;
    if args.rerank_by_sim && loaded.is_none() {
        return Err(Error::Config("--rerank-by-sim needs --embeddings or --scores".into()).into());
    }

    let mut per_method: BTreeMap<String, Vec<TripletSet>> = BTreeMap::new();
    for (tag, path) in &inputs {
        manifest.input(&format!("input.{tag}"), path)?;
        per_method.insert(tag.clone(), load_triplets(path)?);
    }

    let mut outcomes = Vec::new();
    for plan in &plans {
        let c = compose(plan, &per_method)?;
        let triplets = match (args.truncate, &loaded) {
            (None, _) => c.triplets,
            (Some(n), Some(l)) if args.rerank_by_sim => {
                truncate_by_similarity(&c.triplets, n, &l.source() as &dyn SimilaritySource)?
            }
            (Some(n), _) => truncate(&c.triplets, n)?,
        };
        let file = format!("{}.jsonl", plan.name);
        save_triplets(out.record(&file), &triplets)?;
        let negatives = triplets.iter().map(TripletSet::negative_count).sum();
        eprintln!(
            "{}: {} queries, {} negatives ({} duplicates across sources) -> {}",
            plan.name,
            triplets.len(),
            negatives,
            c.duplicates,
            file
        );
        outcomes.push(PlanOutcome {
            name: plan.name.clone(),
            sources: plan.sources.clone(),
            dedup: plan.dedup,
            file,
            queries: triplets.len(),
            negatives,
            concatenated_negatives: c.concatenated_negatives,
            duplicates: c.duplicates,
            coverage_mismatches: c.coverage_mismatches,
        });
    }
    out.json("combine.json", &outcomes)?;
    Ok(())
}
