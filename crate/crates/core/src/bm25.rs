//! Okapi BM25 inverted index and lexical hard-negative mining.
//!
//! Scoring uses the Lucene-style IDF, which is always positive:
//!
//! ```text
//! idf(t)      = ln(1 + (N − df + 0.5) / (df + 0.5))
//! score(q, d) = Σ_{t ∈ q} idf(t) · tf·(k1 + 1) / (tf + k1·(1 − b + b·|d| / avgdl))
//! ```
//!
//! Query terms are deduplicated before scoring. Top-k selection keeps a
//! bounded heap of size k, so mining one query costs O(D log k) for D
//! matching documents.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{CorpusRecord, Negative, TripletSet};
use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 50;
pub const DEFAULT_K1: f64 = 1.5;
pub const DEFAULT_B: f64 = 0.75;
pub const METHOD_TAG: &str = "bm25";

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "but", "by", "for", "if", "in", "into", "is", "it",
    "no", "not", "of", "on", "or", "such", "that", "the", "their", "then", "there", "these",
    "they", "this", "to", "was", "will", "with", "what", "which", "who", "how", "when", "where",
];

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
    pub stopwords: bool,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params {
            k1: DEFAULT_K1,
            b: DEFAULT_B,
            stopwords: false,
        }
    }
}

impl Bm25Params {
    fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0 && self.k1.is_finite()) {
            return Err(Error::domain(format!("k1 must be > 0, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::domain(format!("b must be in [0, 1], got {}", self.b)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc_row: u32,
    pub tf: u32,
}

#[derive(Debug, Clone)]
pub struct Bm25Index {
    postings: HashMap<String, Vec<Posting>>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    total_length: u64,
    doc_ids: Vec<String>,
    row_of: HashMap<String, u32>,
    params: Bm25Params,
}

impl Bm25Index {
    pub fn build(corpus: &[CorpusRecord], params: Bm25Params) -> Result<Self> {
        params.validate()?;
        if corpus.is_empty() {
            return Err(Error::domain("cannot index an empty corpus"));
        }
        let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();
        let mut doc_lengths = Vec::with_capacity(corpus.len());
        let mut doc_ids = Vec::with_capacity(corpus.len());
        let mut row_of = HashMap::with_capacity(corpus.len());
        let stop: HashSet<&str> = if params.stopwords {
            STOPWORDS.iter().copied().collect()
        } else {
            HashSet::new()
        };

        for (row, rec) in corpus.iter().enumerate() {
            let row = row as u32;
            if row_of.insert(rec.doc_id.clone(), row).is_some() {
                return Err(Error::Validation(vec![format!(
                    "duplicate doc_id {:?} in corpus",
                    rec.doc_id
                )]));
            }
            doc_ids.push(rec.doc_id.clone());
            let mut tf: HashMap<String, u32> = HashMap::new();
            let mut len = 0u32;
            for tok in tokenize(&rec.text) {
                if stop.contains(tok.as_str()) {
                    continue;
                }
                len += 1;
                *tf.entry(tok).or_default() += 1;
            }
            doc_lengths.push(len);
            for (term, count) in tf {
                postings
                    .entry(term)
                    .or_default()
                    .push(Posting { doc_row: row, tf: count });
            }
        }
        // rows were pushed in increasing order, so every list is already sorted
        let total_length: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        let avg_doc_length = total_length as f64 / doc_lengths.len() as f64;
        Ok(Bm25Index {
            postings,
            doc_lengths,
            avg_doc_length,
            total_length,
            doc_ids,
            row_of,
            params,
        })
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_length(&self, row: usize) -> u32 {
        self.doc_lengths[row]
    }

    pub fn doc_id(&self, row: usize) -> &str {
        &self.doc_ids[row]
    }

    pub fn row(&self, doc_id: &str) -> Option<usize> {
        self.row_of.get(doc_id).map(|&r| r as usize)
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    /// Tokenizes query text with the same rules (and stopword setting) the
    /// index was built with.
    pub fn query_terms(&self, text: &str) -> Vec<String> {
        let toks = tokenize(text);
        if self.params.stopwords {
            toks.into_iter()
                .filter(|t| !STOPWORDS.contains(&t.as_str()))
                .collect()
        } else {
            toks
        }
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_count() as f64;
        let df = self.postings(term).len() as f64;
        ((n - df + 0.5) / (df + 0.5)).ln_1p()
    }

    /// `idf · tf·(k1+1) / (tf + k1·(1 − b + b·len/avgdl))`. The saturation
    /// factor is evaluated with numerator and denominator scaled by the total
    /// corpus length, so for dyadic `k1` and `b` (the defaults) both are exact
    /// and the single division rounds correctly: documents with
    /// mathematically equal scores get bit-identical ones.
    fn term_weight(&self, idf: f64, tf: u32, row: usize) -> f64 {
        let Bm25Params { k1, b, .. } = self.params;
        let tf = tf as f64;
        let total = self.total_length as f64;
        let len = self.doc_lengths[row] as f64;
        let n = self.doc_count() as f64;
        let num = tf * (k1 + 1.0) * total;
        let den = (tf + k1 * (1.0 - b)) * total + k1 * b * len * n;
        idf * (num / den)
    }

    /// BM25 score of one document for the given query terms.
    pub fn score(&self, query_terms: &[String], doc_row: usize) -> Result<f64> {
        if doc_row >= self.doc_count() {
            return Err(Error::Range {
                index: doc_row,
                len: self.doc_count(),
            });
        }
        let mut parts = Vec::new();
        for term in unique(query_terms) {
            let list = self.postings(term);
            if let Ok(pos) = list.binary_search_by_key(&(doc_row as u32), |p| p.doc_row) {
                parts.push(self.term_weight(self.idf(term), list[pos].tf, doc_row));
            }
        }
        Ok(canonical_sum(parts))
    }

    /// Scores every document that shares a term with the query. Returns
    /// (row, score) pairs in first-touched order.
    fn accumulate(&self, query_terms: &[String]) -> Vec<(usize, f64)> {
        let mut acc: HashMap<usize, usize> = HashMap::new();
        let mut parts: Vec<(usize, Vec<f64>)> = Vec::new();
        for term in unique(query_terms) {
            let list = self.postings(term);
            if list.is_empty() {
                continue;
            }
            let idf = self.idf(term);
            for p in list {
                let row = p.doc_row as usize;
                let w = self.term_weight(idf, p.tf, row);
                match acc.get(&row) {
                    Some(&slot) => parts[slot].1.push(w),
                    None => {
                        acc.insert(row, parts.len());
                        parts.push((row, vec![w]));
                    }
                }
            }
        }
        parts.into_iter().map(|(row, p)| (row, canonical_sum(p))).collect()
    }

    /// Top-`k` documents for `query_text`, skipping `exclude_ids`. Ties are
    /// ordered by ascending doc id. Only documents with a positive score are
    /// returned.
    pub fn mine_negatives(
        &self,
        query_id: &str,
        query_text: &str,
        k: usize,
        exclude_ids: &HashSet<&str>,
    ) -> Result<MinedNegatives> {
        if k == 0 {
            return Err(Error::domain("k must be >= 1"));
        }
        let terms = self.query_terms(query_text);
        let mut top = TopK::new(k);
        for (row, score) in self.accumulate(&terms) {
            let id = self.doc_ids[row].as_str();
            if score > 0.0 && !exclude_ids.contains(id) {
                top.push(Candidate { score, doc_id: id });
            }
        }
        Ok(MinedNegatives {
            query_id: query_id.to_string(),
            ranked: top
                .into_sorted()
                .into_iter()
                .map(|c| (c.doc_id.to_string(), c.score))
                .collect(),
            k_requested: k,
        })
    }
}

/// Sums term contributions in ascending order, so documents whose
/// contributions form the same multiset get bit-identical scores and the
/// doc-id tie-break applies.
fn canonical_sum(mut parts: Vec<f64>) -> f64 {
    parts.sort_by(f64::total_cmp);
    parts.into_iter().sum()
}

fn unique(terms: &[String]) -> impl Iterator<Item = &str> {
    let mut seen = HashSet::new();
    terms
        .iter()
        .map(String::as_str)
        .filter(move |t| seen.insert(*t))
}

#[derive(Debug, Clone, Copy)]
struct Candidate<'a> {
    score: f64,
    doc_id: &'a str,
}

// "Greater" means ranked higher: larger score, then smaller doc id.
impl Ord for Candidate<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.doc_id.cmp(self.doc_id))
    }
}

impl PartialOrd for Candidate<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate<'_> {}

/// Keeps the `limit` best candidates seen so far; the worst sits on top.
struct TopK<'a> {
    heap: BinaryHeap<Reverse<Candidate<'a>>>,
    limit: usize,
}

impl<'a> TopK<'a> {
    fn new(limit: usize) -> Self {
        TopK {
            heap: BinaryHeap::with_capacity(limit + 1),
            limit,
        }
    }

    fn push(&mut self, c: Candidate<'a>) {
        if self.heap.len() < self.limit {
            self.heap.push(Reverse(c));
        } else if let Some(Reverse(worst)) = self.heap.peek() {
            if c > *worst {
                self.heap.pop();
                self.heap.push(Reverse(c));
            }
        }
    }

    fn into_sorted(self) -> Vec<Candidate<'a>> {
        // ascending Reverse order is descending candidate order
        self.heap.into_sorted_vec().into_iter().map(|Reverse(c)| c).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinedNegatives {
    pub query_id: String,
    pub ranked: Vec<(String, f64)>,
    pub k_requested: usize,
}

impl MinedNegatives {
    pub fn into_triplet(self, positive_ids: Vec<String>) -> TripletSet {
        TripletSet {
            query_id: self.query_id,
            positive_ids,
            negatives: self
                .ranked
                .into_iter()
                .map(|(d, _)| Negative::new(d, METHOD_TAG))
                .collect(),
        }
    }
}

/// One query to mine for.
#[derive(Debug, Clone)]
pub struct MiningQuery<'a> {
    pub query_id: &'a str,
    pub text: &'a str,
    pub positive_ids: &'a [String],
}

#[derive(Debug, Clone, Default)]
pub struct MiningOutcome {
    pub mined: Vec<MinedNegatives>,
    /// Queries for which no non-excluded document scored above zero.
    pub zero_match_queries: usize,
}

/// Mines every query in parallel. Output order follows input order.
pub fn mine_all(index: &Bm25Index, queries: &[MiningQuery<'_>], k: usize) -> Result<MiningOutcome> {
    let mined = queries
        .par_iter()
        .map(|q| {
            let exclude: HashSet<&str> = q.positive_ids.iter().map(String::as_str).collect();
            index.mine_negatives(q.query_id, q.text, k, &exclude)
        })
        .collect::<Result<Vec<_>>>()?;
    let zero_match_queries = mined.iter().filter(|m| m.ranked.is_empty()).count();
    Ok(MiningOutcome {
        mined,
        zero_match_queries,
    })
}
