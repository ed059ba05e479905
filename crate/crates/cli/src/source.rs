use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use hardneg_core::dataset::{ids_path, load_scores, read_embeddings_raw};
use hardneg_core::similarity::{EmbeddingSource, SimilaritySource};
use hardneg_core::{EmbeddingMatrix, Error, ScoreFile};
use serde::Serialize;

use crate::manifest::RunManifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Prefer {
    Embeddings,
    Scores,
}

#[derive(Debug, Args)]
pub struct SourceArgs {
    /// Document (and, by default, query) embeddings: binary with an `.ids`
    /// sidecar, or JSONL `{"id", "vector"}`.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Separate query embeddings.
    #[arg(long, requires = "embeddings")]
    pub query_embeddings: Option<PathBuf>,
    /// Precomputed `query_id \t doc_id \t score` similarities.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Which input to use when both embeddings and scores are given.
    #[arg(long, value_enum)]
    pub prefer: Option<Prefer>,
}

impl SourceArgs {
    pub fn is_empty(&self) -> bool {
        self.embeddings.is_none() && self.scores.is_none()
    }
}

pub enum Loaded {
    Embeddings {
        queries: Option<EmbeddingMatrix>,
        docs: EmbeddingMatrix,
    },
    Scores(ScoreFile),
}

pub struct Borrowed<'a>(BorrowedInner<'a>);

enum BorrowedInner<'a> {
    Emb(EmbeddingSource<'a>),
    Scores(&'a ScoreFile),
}

impl SimilaritySource for Borrowed<'_> {
    fn similarities(&self, t: &hardneg_core::TripletSet) -> hardneg_core::Result<(Vec<f64>, Vec<f64>)> {
        match &self.0 {
            BorrowedInner::Emb(e) => e.similarities(t),
            BorrowedInner::Scores(s) => s.similarities(t),
        }
    }
}

impl Loaded {
    pub fn source(&self) -> Borrowed<'_> {
        Borrowed(match self {
            Loaded::Embeddings { queries, docs } => BorrowedInner::Emb(EmbeddingSource {
                queries: queries.as_ref().unwrap_or(docs),
                docs,
            }),
            Loaded::Scores(s) => BorrowedInner::Scores(s),
        })
    }

    pub fn is_embeddings(&self) -> bool {
        matches!(self, Loaded::Embeddings { .. })
    }
}

fn load_matrix(role: &str, path: &Path, manifest: &mut RunManifest) -> Result<(EmbeddingMatrix, bool), Error> {
    manifest.input(role, path)?;
    let ext = path.extension().and_then(|e| e.to_str());
    if !matches!(ext, Some("jsonl") | Some("json")) {
        manifest.input(&format!("{role}.ids"), &ids_path(path))?;
    }
    let mut m = read_embeddings_raw(path)?;
    let normalized = !m.is_unit_norm();
    if normalized {
        m.normalize();
    }
    Ok((m, normalized))
}

/// Resolves the similarity input. Returns `None` when neither embeddings
/// nor scores were given.
pub fn load(args: &SourceArgs, manifest: &mut RunManifest) -> Result<Option<Loaded>, Error> {
    let choice = match (&args.embeddings, &args.scores, args.prefer) {
        (None, None, None) => return Ok(None),
        (None, None, Some(_)) => {
            return Err(Error::Config("--prefer given without --embeddings or --scores".into()))
        }
        (Some(_), Some(_), None) => {
            return Err(Error::Config(
                "both --embeddings and --scores given; pick one with --prefer".into(),
            ))
        }
        (Some(_), _, None) | (Some(_), _, Some(Prefer::Embeddings)) => Prefer::Embeddings,
        (_, Some(_), None) | (_, Some(_), Some(Prefer::Scores)) => Prefer::Scores,
        (None, Some(_), Some(Prefer::Embeddings)) => {
            return Err(Error::Config("--prefer embeddings but no --embeddings given".into()))
        }
        (Some(_), None, Some(Prefer::Scores)) => {
            return Err(Error::Config("--prefer scores but no --scores given".into()))
        }
    };
    manifest.param("similarity_source", choice);
    match choice {
        Prefer::Embeddings => {
            let (docs, mut normalized) = load_matrix("embeddings", args.embeddings.as_ref().unwrap(), manifest)?;
            let queries = match &args.query_embeddings {
                Some(p) => {
                    let (q, n) = load_matrix("query_embeddings", p, manifest)?;
                    if q.dim() != docs.dim() {
                        return Err(Error::Shape {
                            expected: docs.dim(),
                            found: q.dim(),
                        });
                    }
                    normalized |= n;
                    Some(q)
                }
                None => None,
            };
            manifest.param("normalized_on_load", normalized);
            Ok(Some(Loaded::Embeddings { queries, docs }))
        }
        Prefer::Scores => {
            let p = args.scores.as_ref().unwrap();
            manifest.input("scores", p)?;
            Ok(Some(Loaded::Scores(load_scores(p)?)))
        }
    }
}
