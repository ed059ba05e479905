//! Naive reference implementations shared by the CLI test targets.

#![allow(dead_code)]

use std::collections::HashSet;

/// Scores closer than this are treated as tied.
pub const TIE_TOL: f64 = 1e-9;

pub fn naive_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn naive_top_k(docs: &[(String, String)], query: &str, k: usize, exclude: &HashSet<String>) -> Vec<(String, f64)> {
    let (k1, b) = (1.5, 0.75);
    let toks: Vec<Vec<String>> = docs.iter().map(|(_, t)| naive_tokens(t)).collect();
    let n = docs.len() as f64;
    let avgdl = toks.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let mut terms: Vec<String> = Vec::new();
    for t in naive_tokens(query) {
        if !terms.contains(&t) {
            terms.push(t);
        }
    }
    let mut scored: Vec<(String, f64)> = Vec::new();
    for (i, (id, _)) in docs.iter().enumerate() {
        if exclude.contains(id) {
            continue;
        }
        let mut parts = Vec::new();
        for term in &terms {
            let tf = toks[i].iter().filter(|t| *t == term).count() as f64;
            if tf > 0.0 {
                let df = toks.iter().filter(|d| d.contains(term)).count() as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                parts.push(idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * toks[i].len() as f64 / avgdl)));
            }
        }
        // smallest first, so equal contribution sets give equal scores
        parts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let s: f64 = parts.iter().sum();
        if s > 0.0 {
            scored.push((id.clone(), s));
        }
    }
    let mut ranked = rank_with_ties(scored, TIE_TOL);
    ranked.truncate(k);
    ranked
}

/// Orders by score, treating scores within the comparison tolerance as tied
/// and ordering tied documents by id.
pub fn rank_with_ties(mut v: Vec<(String, f64)>, tol: f64) -> Vec<(String, f64)> {
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut i = 0;
    while i < v.len() {
        let mut j = i + 1;
        while j < v.len() && v[j - 1].1 - v[j].1 <= tol {
            j += 1;
        }
        v[i..j].sort_by(|a, b| a.0.cmp(&b.0));
        i = j;
    }
    v
}
