use std::collections::HashMap;
use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use hardneg_core::analysis::load_qrels;
use hardneg_core::bm25::{mine_all, MiningQuery, DEFAULT_B, DEFAULT_K, DEFAULT_K1, METHOD_TAG};
use hardneg_core::dataset::{load_corpus, load_queries, load_triplets, save_triplets};
use hardneg_core::{Bm25Index, Bm25Params, Error};

use crate::manifest::RunManifest;
use crate::output::{file_safe, Output};

#[derive(Debug, Args)]
pub struct MineArgs {
    /// Corpus JSONL: `{"doc_id", "text"}` per line.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Queries JSONL: `{"query_id", "text"}` per line.
    #[arg(long)]
    pub queries: PathBuf,
    /// Known positives: triplets JSONL (negatives ignored) or a
    /// `query_id \t doc_id \t grade` qrels TSV (grade > 0 is positive).
    #[arg(long)]
    pub positives: PathBuf,
    /// Negatives kept per query.
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
    #[arg(long, default_value_t = DEFAULT_K1)]
    pub k1: f64,
    #[arg(long, default_value_t = DEFAULT_B)]
    pub b: f64,
    /// Drop common English stopwords before indexing.
    #[arg(long)]
    pub stopwords: bool,
    #[arg(long, default_value = "triplets.jsonl")]
    pub out: String,
}

fn load_positives(path: &std::path::Path) -> Result<HashMap<String, Vec<String>>, Error> {
    if path.extension().and_then(|e| e.to_str()) == Some("tsv") {
        let qrels = load_qrels(path)?;
        Ok(qrels
            .into_iter()
            .map(|(q, rels)| {
                let mut ids: Vec<String> = rels.into_iter().filter(|(_, g)| *g > 0).map(|(d, _)| d).collect();
                ids.sort();
                (q, ids)
            })
            .filter(|(_, ids)| !ids.is_empty())
            .collect())
    } else {
        Ok(load_triplets(path)?
            .into_iter()
            .map(|t| (t.query_id, t.positive_ids))
            .collect())
    }
}

pub fn run(args: &MineArgs, out: &mut Output, manifest: &mut RunManifest) -> Result<()> {
    let params = Bm25Params {
        k1: args.k1,
        b: args.b,
        stopwords: args.stopwords,
    };
    manifest.param("k", args.k);
    manifest.param("k1", args.k1);
    manifest.param("b", args.b);
    manifest.param("stopwords", args.stopwords);
    manifest.param("method", METHOD_TAG);
    file_safe(&args.out)?;
    if args.k == 0 {
        return Err(Error::Domain("k must be >= 1".into()).into());
    }

    manifest.input("corpus", &args.corpus)?;
    manifest.input("queries", &args.queries)?;
    manifest.input("positives", &args.positives)?;
    let corpus = load_corpus(&args.corpus)?;
    let queries = load_queries(&args.queries)?;
    let positives = load_positives(&args.positives)?;

    let known: std::collections::HashSet<&str> = queries.iter().map(|q| q.query_id.as_str()).collect();
    let mut missing: Vec<String> = positives
        .keys()
        .filter(|q| !known.contains(q.as_str()))
        .cloned()
        .collect();
    if !missing.is_empty() {
        missing.sort();
        return Err(Error::Lookup {
            what: "query texts",
            missing,
        }
        .into());
    }

    let index = Bm25Index::build(&corpus, params)?;
    let jobs: Vec<MiningQuery<'_>> = queries
        .iter()
        .filter_map(|q| {
            positives.get(&q.query_id).map(|pos| MiningQuery {
                query_id: &q.query_id,
                text: &q.text,
                positive_ids: pos,
            })
        })
        .collect();
    let outcome = mine_all(&index, &jobs, args.k)?;
    manifest.param("queries_mined", jobs.len());
    manifest.param("queries_without_positives", queries.len() - jobs.len());
    manifest.param("zero_match_queries", outcome.zero_match_queries);

    let triplets: Vec<_> = outcome
        .mined
        .into_iter()
        .zip(&jobs)
        .map(|(m, q)| m.into_triplet(q.positive_ids.to_vec()))
        .collect();
    let path = out.record(&args.out);
    save_triplets(&path, &triplets)?;
    eprintln!(
        "mined {} queries (k={}, {} with no lexical match) -> {}",
        triplets.len(),
        args.k,
        outcome.zero_match_queries,
        path.display()
    );
    Ok(())
}
