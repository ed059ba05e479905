use std::io::Write;

use hardneg_core::dataset::{
    load_scores, load_triplets, save_embeddings_bin, save_scores, EmbeddingMatrix, Negative,
    TripletSet,
};
use hardneg_core::eci::{build_report, DEFAULT_TEMPERATURE};
use hardneg_core::similarity::{batch_stats, export_similarities, summarize_method, EmbeddingSource};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn ten_thousand_triplets_stream_in() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("big.jsonl");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&p).unwrap());
    for i in 0..10_000 {
        writeln!(
            f,
            r#"{{"query_id":"q{i}","positive_ids":["p{i}"],"negatives":[{{"doc_id":"n{i}a","method":"bm25"}},{{"doc_id":"n{i}b","method":"bm25"}}]}}"#
        )
        .unwrap();
    }
    drop(f);
    let t = load_triplets(&p).unwrap();
    assert_eq!(t.len(), 10_000);
    assert_eq!(t[9_999].query_id, "q9999");
}

fn synthetic(rng: &mut ChaCha8Rng, queries: usize, docs: usize, dim: usize) -> (EmbeddingMatrix, Vec<TripletSet>) {
    let mut ids = Vec::new();
    let mut data = Vec::new();
    for q in 0..queries {
        ids.push(format!("q{q}"));
    }
    for d in 0..docs {
        ids.push(format!("d{d}"));
    }
    for _ in 0..ids.len() {
        data.extend((0..dim).map(|_| rng.gen_range(-1.0f32..1.0)));
    }
    let m = EmbeddingMatrix::new(ids, dim, data).unwrap();
    let triplets = (0..queries)
        .map(|q| {
            let pos = rng.gen_range(0..docs);
            let mut negs: Vec<usize> = (0..docs).filter(|&d| d != pos).collect();
            negs.truncate(rng.gen_range(0..8));
            TripletSet {
                query_id: format!("q{q}"),
                positive_ids: vec![format!("d{pos}")],
                negatives: negs.into_iter().map(|d| Negative::new(format!("d{d}"), "bm25")).collect(),
            }
        })
        .collect();
    (m, triplets)
}

#[test]
fn exported_scores_reproduce_embedding_stats() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (m, triplets) = synthetic(&mut rng, 40, 30, 16);
    let source = EmbeddingSource { queries: &m, docs: &m };
    let from_emb = batch_stats(&triplets, &source).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("scores.tsv");
    save_scores(&p, &export_similarities(&triplets, &source).unwrap()).unwrap();
    let scores = load_scores(&p).unwrap();
    let from_scores = batch_stats(&triplets, &scores).unwrap();
    assert_eq!(from_emb, from_scores);
}

#[test]
fn binary_embeddings_feed_the_pipeline() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (m, triplets) = synthetic(&mut rng, 10, 12, 8);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("emb.bin");
    save_embeddings_bin(&p, &m).unwrap();
    let loaded = hardneg_core::dataset::read_embeddings(&p).unwrap();
    assert!(loaded.is_unit_norm());
    let src = EmbeddingSource { queries: &loaded, docs: &loaded };
    let stats = batch_stats(&triplets, &src).unwrap();
    let summary = summarize_method(&stats, "bm25").unwrap();
    let report = build_report(&summary, DEFAULT_TEMPERATURE, Some("synthetic")).unwrap();
    assert!(report.eci >= 0.0 && report.eci <= report.arithmetic_score + 1e-12);

    let orig = batch_stats(&triplets, &EmbeddingSource { queries: &m, docs: &m }).unwrap();
    for (a, b) in orig.iter().zip(&stats) {
        assert!((a.max_sim_p - b.max_sim_p).abs() < 1e-6);
    }
}

#[test]
fn batch_stats_reports_every_missing_id() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (m, mut triplets) = synthetic(&mut rng, 3, 5, 4);
    triplets[0].negatives.push(Negative::new("ghost1", "x"));
    triplets[2].positive_ids.push("ghost2".into());
    match batch_stats(&triplets, &EmbeddingSource { queries: &m, docs: &m }).unwrap_err() {
        hardneg_core::Error::Lookup { missing, .. } => {
            assert_eq!(missing, vec!["doc ghost1", "doc ghost2"]);
        }
        e => panic!("unexpected {e}"),
    }
}
