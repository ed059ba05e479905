//! File formats and loaders for corpora, queries, triplets, embeddings and
//! externally computed relevance scores.
//!
//! Text formats are line oriented (JSONL / TSV) and parsed one line at a
//! time. Loaders collect every problem in a file before failing so a broken
//! dataset can be fixed in one pass.
//!
//! Binary embedding layout (little endian):
//!
//! ```text
//! offset  size  field
//! 0       7     magic  "NEGEMB1"
//! 7       4     count  u32
//! 11      4     dim    u32
//! 15      4     dtype  u32 (1 = float32)
//! 19      ..    count * dim float32 values, row major
//! ```
//!
//! Row ids live in a sidecar file with the same stem and an `.ids`
//! extension, one id per line, aligned with the rows.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 7] = b"NEGEMB1";
pub const DTYPE_F32: u32 = 1;
const HEADER_LEN: usize = 7 + 4 + 4 + 4;
const UNIT_NORM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub doc_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    pub text: String,
}

/// A hard negative together with the method that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Negative {
    pub doc_id: String,
    pub method: String,
}

impl Negative {
    pub fn new(doc_id: impl Into<String>, method: impl Into<String>) -> Self {
        Negative {
            doc_id: doc_id.into(),
            method: method.into(),
        }
    }
}

/// One query with its positives and an ordered list of hard negatives.
/// Negative order is mining rank order and is preserved everywhere.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletSet {
    pub query_id: String,
    pub positive_ids: Vec<String>,
    pub negatives: Vec<Negative>,
}

impl TripletSet {
    pub fn negative_count(&self) -> usize {
        self.negatives.len()
    }

    /// Returns every invariant violation. An empty vector means valid.
    pub fn violations(&self, allow_duplicate_negatives: bool) -> Vec<String> {
        let mut out = Vec::new();
        if self.query_id.is_empty() {
            out.push("empty query_id".to_string());
        }
        if self.positive_ids.is_empty() {
            out.push(format!("query {:?} has no positive_ids", self.query_id));
        }
        let positives: HashSet<&str> = self.positive_ids.iter().map(String::as_str).collect();
        let mut seen = HashSet::new();
        for neg in &self.negatives {
            if neg.doc_id.is_empty() {
                out.push(format!("query {:?} has a negative with empty doc_id", self.query_id));
            }
            if neg.method.is_empty() {
                out.push(format!(
                    "query {:?} negative {:?} has an empty method tag",
                    self.query_id, neg.doc_id
                ));
            }
            if positives.contains(neg.doc_id.as_str()) {
                out.push(format!(
                    "negative ({}, {}) is also a positive",
                    self.query_id, neg.doc_id
                ));
            }
            if !seen.insert(neg.doc_id.as_str()) && !allow_duplicate_negatives {
                out.push(format!(
                    "duplicate negative ({}, {})",
                    self.query_id, neg.doc_id
                ));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TripletLoadOptions {
    /// Accept repeated negatives within a query. Only useful for sets
    /// produced by concatenation without deduplication.
    pub allow_duplicate_negatives: bool,
}

// ---------------------------------------------------------------------------
// JSONL plumbing
// ---------------------------------------------------------------------------

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Streams `path` line by line, deserializing each non-blank line.
/// The callback receives the 1-based line number with each record.
/// Malformed lines are collected; the first one is reported with a count of
/// the remainder.
fn read_jsonl<T, F>(path: &Path, mut on_record: F) -> Result<()>
where
    T: for<'de> Deserialize<'de>,
    F: FnMut(usize, T),
{
    let reader = open(path)?;
    let mut bad: Vec<(usize, String)> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<T>(&line) {
            Ok(rec) => on_record(lineno, rec),
            Err(e) => bad.push((lineno, e.to_string())),
        }
    }
    if let Some((line, msg)) = bad.first() {
        let mut message = msg.clone();
        if bad.len() > 1 {
            let rest: Vec<String> = bad[1..].iter().map(|(l, _)| l.to_string()).collect();
            message.push_str(&format!(
                " ({} more malformed lines: {})",
                rest.len(),
                rest.join(", ")
            ));
        }
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: *line,
            message,
        });
    }
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = create(path)?;
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn fail_on(issues: Vec<String>) -> Result<()> {
    if issues.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(issues))
    }
}

// ---------------------------------------------------------------------------
// Corpus / queries / triplets
// ---------------------------------------------------------------------------

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<CorpusRecord>> {
    let path = path.as_ref();
    let mut records = Vec::new();
    let mut first_seen: HashMap<String, usize> = HashMap::new();
    let mut issues = Vec::new();
    read_jsonl(path, |line, rec: CorpusRecord| {
        if rec.doc_id.is_empty() {
            issues.push(format!("line {line}: empty doc_id"));
        }
        if rec.text.is_empty() {
            issues.push(format!("line {line}: empty text for doc_id {:?}", rec.doc_id));
        }
        if let Some(prev) = first_seen.get(&rec.doc_id) {
            issues.push(format!(
                "line {line}: duplicate doc_id {:?} (first seen on line {prev})",
                rec.doc_id
            ));
        } else {
            first_seen.insert(rec.doc_id.clone(), line);
        }
        records.push(rec);
    })?;
    fail_on(issues)?;
    Ok(records)
}

pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<QueryRecord>> {
    let path = path.as_ref();
    let mut records = Vec::new();
    let mut first_seen: HashMap<String, usize> = HashMap::new();
    let mut issues = Vec::new();
    read_jsonl(path, |line, rec: QueryRecord| {
        if rec.query_id.is_empty() {
            issues.push(format!("line {line}: empty query_id"));
        }
        if let Some(prev) = first_seen.get(&rec.query_id) {
            issues.push(format!(
                "line {line}: duplicate query_id {:?} (first seen on line {prev})",
                rec.query_id
            ));
        } else {
            first_seen.insert(rec.query_id.clone(), line);
        }
        records.push(rec);
    })?;
    fail_on(issues)?;
    Ok(records)
}

pub fn load_triplets(path: impl AsRef<Path>) -> Result<Vec<TripletSet>> {
    load_triplets_with(path, TripletLoadOptions::default())
}

/// Loads a triplet file. Each query may appear on only one line.
pub fn load_triplets_with(
    path: impl AsRef<Path>,
    opts: TripletLoadOptions,
) -> Result<Vec<TripletSet>> {
    let path = path.as_ref();
    let mut records = Vec::new();
    let mut first_seen: HashMap<String, usize> = HashMap::new();
    let mut issues = Vec::new();
    read_jsonl(path, |line, rec: TripletSet| {
        for v in rec.violations(opts.allow_duplicate_negatives) {
            issues.push(format!("line {line}: {v}"));
        }
        if let Some(prev) = first_seen.get(&rec.query_id) {
            issues.push(format!(
                "line {line}: query_id {:?} repeated (first seen on line {prev})",
                rec.query_id
            ));
        } else {
            first_seen.insert(rec.query_id.clone(), line);
        }
        records.push(rec);
    })?;
    fail_on(issues)?;
    Ok(records)
}

pub fn save_corpus(path: impl AsRef<Path>, records: &[CorpusRecord]) -> Result<()> {
    write_jsonl(path.as_ref(), records)
}

pub fn save_queries(path: impl AsRef<Path>, records: &[QueryRecord]) -> Result<()> {
    write_jsonl(path.as_ref(), records)
}

pub fn save_triplets(path: impl AsRef<Path>, triplets: &[TripletSet]) -> Result<()> {
    write_jsonl(path.as_ref(), triplets)
}

// ---------------------------------------------------------------------------
// Score files
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub query_id: String,
    pub doc_id: String,
    pub score: f64,
}

/// Externally computed (query, doc) relevance scores, e.g. from a
/// cross-encoder. At most one entry per pair.
#[derive(Debug, Clone, Default)]
pub struct ScoreFile {
    entries: Vec<ScoreEntry>,
    index: HashMap<(String, String), usize>,
}

impl ScoreFile {
    /// Builds a score file, rejecting duplicate pairs and non-finite scores.
    pub fn from_entries(entries: Vec<ScoreEntry>) -> Result<Self> {
        let mut issues = Vec::new();
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if !e.score.is_finite() {
                issues.push(format!(
                    "non-finite score for ({}, {})",
                    e.query_id, e.doc_id
                ));
            }
            let key = (e.query_id.clone(), e.doc_id.clone());
            if index.insert(key, i).is_some() {
                issues.push(format!("duplicate pair ({}, {})", e.query_id, e.doc_id));
            }
        }
        fail_on(issues)?;
        Ok(ScoreFile { entries, index })
    }

    pub fn entries(&self) -> &[ScoreEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, query_id: &str, doc_id: &str) -> Option<f64> {
        // The tuple key forces an allocation per lookup; fine at the sizes
        // score files come in.
        self.index
            .get(&(query_id.to_string(), doc_id.to_string()))
            .map(|&i| self.entries[i].score)
    }
}

pub fn load_scores(path: impl AsRef<Path>) -> Result<ScoreFile> {
    let path = path.as_ref();
    let reader = open(path)?;
    let mut entries = Vec::new();
    let mut issues = Vec::new();
    let mut first_seen: HashMap<(String, String), usize> = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let score: f64 = match fields[2].trim().parse() {
            Ok(s) => s,
            Err(_) => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno,
                    message: format!("score {:?} is not a number", fields[2]),
                })
            }
        };
        if !score.is_finite() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                message: format!("score {:?} is not finite", fields[2]),
            });
        }
        let key = (fields[0].to_string(), fields[1].to_string());
        if let Some(prev) = first_seen.get(&key) {
            issues.push(format!(
                "line {lineno}: duplicate pair ({}, {}) (first seen on line {prev})",
                key.0, key.1
            ));
            continue;
        }
        first_seen.insert(key, lineno);
        entries.push(ScoreEntry {
            query_id: fields[0].to_string(),
            doc_id: fields[1].to_string(),
            score,
        });
    }
    fail_on(issues)?;
    ScoreFile::from_entries(entries)
}

/// Writes scores using the shortest representation that round-trips, so a
/// save/load cycle is lossless.
pub fn save_scores(path: impl AsRef<Path>, entries: &[ScoreEntry]) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    for e in entries {
        writeln!(w, "{}\t{}\t{}", e.query_id, e.doc_id, e.score).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Embeddings
// ---------------------------------------------------------------------------

/// Dense row-major embedding matrix keyed by identifier.
#[derive(Debug, Clone)]
pub struct EmbeddingMatrix {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    dim: usize,
    data: Vec<f32>,
    unit_norm: bool,
}

impl EmbeddingMatrix {
    pub fn new(ids: Vec<String>, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Format("embedding dimension must be positive".into()));
        }
        if data.len() != ids.len() * dim {
            return Err(Error::Shape {
                expected: ids.len() * dim,
                found: data.len(),
            });
        }
        let mut index = HashMap::with_capacity(ids.len());
        let mut dups = Vec::new();
        for (row, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), row).is_some() {
                dups.push(format!("duplicate embedding id {id:?}"));
            }
        }
        fail_on(dups)?;
        let unit_norm = Self::check_unit_norm(&data, dim);
        Ok(EmbeddingMatrix {
            ids,
            index,
            dim,
            data,
            unit_norm,
        })
    }

    fn check_unit_norm(data: &[f32], dim: usize) -> bool {
        data.chunks_exact(dim).all(|row| {
            let n: f64 = row.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
            (n - 1.0).abs() <= UNIT_NORM_TOLERANCE
        })
    }

    /// Scales every nonzero row to unit L2 norm. Zero rows are left alone and
    /// keep the matrix from being flagged as unit norm.
    pub fn normalize(&mut self) {
        for row in self.data.chunks_exact_mut(self.dim) {
            let n: f64 = row.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
            if n > 0.0 {
                for x in row.iter_mut() {
                    *x = (f64::from(*x) / n) as f32;
                }
            }
        }
        self.unit_norm = Self::check_unit_norm(&self.data, self.dim);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn is_unit_norm(&self) -> bool {
        self.unit_norm
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index.get(id).map(|&i| self.row(i))
    }

    /// Returns a new matrix holding only `ids`, in that order. Every missing
    /// id is reported.
    pub fn select<S: AsRef<str>>(&self, ids: &[S]) -> Result<EmbeddingMatrix> {
        let missing: Vec<String> = ids
            .iter()
            .filter(|id| !self.index.contains_key(id.as_ref()))
            .map(|id| id.as_ref().to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Lookup {
                what: "embedding ids",
                missing,
            });
        }
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        let mut out_ids = Vec::with_capacity(ids.len());
        let mut seen = HashSet::new();
        for id in ids {
            let id = id.as_ref();
            if !seen.insert(id) {
                continue;
            }
            data.extend_from_slice(self.get(id).expect("checked above"));
            out_ids.push(id.to_string());
        }
        EmbeddingMatrix::new(out_ids, self.dim, data)
    }
}

/// Sidecar id-list path for a binary embedding file.
pub fn ids_path(path: &Path) -> PathBuf {
    path.with_extension("ids")
}

fn is_jsonl(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("jsonl") | Some("json")
    )
}

#[derive(Deserialize, Serialize)]
struct EmbeddingLine {
    id: String,
    vector: Vec<f32>,
}

/// Reads a whole embedding file (binary + `.ids` sidecar, or JSONL with
/// `{"id", "vector"}` objects) and normalizes rows to unit length.
pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let mut m = read_embeddings_raw(path)?;
    if !m.is_unit_norm() {
        m.normalize();
    }
    Ok(m)
}

/// Like [`read_embeddings`] but leaves rows as stored.
pub fn read_embeddings_raw(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    if is_jsonl(path) {
        read_embeddings_jsonl(path)
    } else {
        read_embeddings_bin(path)
    }
}

/// Loads embeddings for exactly `ids`, rows aligned with the request.
pub fn load_embeddings<S: AsRef<str>>(path: impl AsRef<Path>, ids: &[S]) -> Result<EmbeddingMatrix> {
    read_embeddings(path)?.select(ids)
}

fn read_embeddings_jsonl(path: &Path) -> Result<EmbeddingMatrix> {
    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut dim: Option<usize> = None;
    let mut issues = Vec::new();
    read_jsonl(path, |line, rec: EmbeddingLine| {
        let d = *dim.get_or_insert(rec.vector.len());
        if rec.vector.len() != d {
            issues.push(format!(
                "line {line}: id {:?} has dimension {}, expected {d}",
                rec.id,
                rec.vector.len()
            ));
            return;
        }
        ids.push(rec.id);
        data.extend(rec.vector);
    })?;
    if !issues.is_empty() {
        return Err(Error::Format(format!(
            "{}: inconsistent dimensions: {}",
            path.display(),
            issues.join("; ")
        )));
    }
    match dim {
        None => Err(Error::Format(format!("{}: no embeddings", path.display()))),
        Some(0) => Err(Error::Format(format!("{}: zero-length vectors", path.display()))),
        Some(d) => EmbeddingMatrix::new(ids, d, data),
    }
}

fn read_embeddings_bin(path: &Path) -> Result<EmbeddingMatrix> {
    let mut bytes = Vec::new();
    open(path)?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER_LEN || &bytes[..7] != EMBEDDING_MAGIC {
        return Err(Error::Format(format!(
            "{}: missing NEGEMB1 header",
            path.display()
        )));
    }
    let word = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let count = word(7) as usize;
    let dim = word(11) as usize;
    let dtype = word(15);
    if dtype != DTYPE_F32 {
        return Err(Error::Format(format!(
            "{}: unsupported dtype code {dtype}",
            path.display()
        )));
    }
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != count * dim * 4 {
        return Err(Error::Format(format!(
            "{}: payload is {} bytes, header implies {}",
            path.display(),
            payload.len(),
            count * dim * 4
        )));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let sidecar = ids_path(path);
    let mut ids = Vec::with_capacity(count);
    for line in open(&sidecar)?.lines() {
        let line = line.map_err(|e| Error::io(&sidecar, e))?;
        if !line.is_empty() {
            ids.push(line);
        }
    }
    if ids.len() != count {
        return Err(Error::Format(format!(
            "{}: {} ids for {count} rows",
            sidecar.display(),
            ids.len()
        )));
    }
    EmbeddingMatrix::new(ids, dim, data)
}

/// Writes a binary embedding file and its `.ids` sidecar.
pub fn save_embeddings_bin(path: impl AsRef<Path>, m: &EmbeddingMatrix) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let mut put = |b: &[u8]| w.write_all(b).map_err(|e| Error::io(path, e));
    put(EMBEDDING_MAGIC)?;
    put(&(m.len() as u32).to_le_bytes())?;
    put(&(m.dim as u32).to_le_bytes())?;
    put(&DTYPE_F32.to_le_bytes())?;
    for x in &m.data {
        put(&x.to_le_bytes())?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;

    let sidecar = ids_path(path);
    let mut w = create(&sidecar)?;
    for id in &m.ids {
        writeln!(w, "{id}").map_err(|e| Error::io(&sidecar, e))?;
    }
    w.flush().map_err(|e| Error::io(&sidecar, e))
}

pub fn save_embeddings_jsonl(path: impl AsRef<Path>, m: &EmbeddingMatrix) -> Result<()> {
    let lines: Vec<EmbeddingLine> = m
        .ids
        .iter()
        .enumerate()
        .map(|(i, id)| EmbeddingLine {
            id: id.clone(),
            vector: m.row(i).to_vec(),
        })
        .collect();
    write_jsonl(path.as_ref(), &lines)
}
