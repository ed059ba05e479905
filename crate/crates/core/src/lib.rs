//! Training-free diagnostics for dense-retrieval hard-negative sets.
//!
//! The pipeline is: load or mine triplets ([`dataset`], [`bm25`]), optionally
//! combine methods ([`hybrid`]), compute per-query similarity statistics and
//! aggregate them ([`similarity`]), turn aggregates into ECI and baseline
//! scores ([`eci`]), and check those scores against downstream retrieval
//! quality ([`analysis`]).

pub mod analysis;
pub mod bm25;
pub mod dataset;
pub mod eci;
pub mod error;
pub mod hybrid;
pub mod similarity;

pub use analysis::{
    correlate_reports, ndcg_at_k, pearson_r, render_report, CorrelationRow, CorrelationTable,
    DownstreamRecord, ReportFormat,
};
pub use bm25::{tokenize, Bm25Index, Bm25Params, MinedNegatives};
pub use dataset::{
    CorpusRecord, EmbeddingMatrix, Negative, QueryRecord, ScoreEntry, ScoreFile, TripletSet,
};
pub use eci::{
    arithmetic_baseline, build_report, eci_score, gradient_norm_estimate, harmonic_efficiency,
    info_nce_mi_bound, information_capacity, score_variance_estimate, EciReport,
};
pub use error::{Error, Result};
pub use hybrid::{compose, truncate, CompositionPlan, DedupPolicy};
pub use similarity::{
    cosine, per_query_stats, per_query_stats_from_scores, summarize_method, MethodSummary,
    PerQueryStats,
};
