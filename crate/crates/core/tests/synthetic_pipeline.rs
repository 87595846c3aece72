use std::path::PathBuf;

use contrast_core::contrast::assemble_contrast;
use contrast_core::graph::build_graph;
use contrast_core::ingest::{self, Format, IngestConfig};
use contrast_core::matching::{solve, Solver};
use contrast_core::model::{flatten, Split};
use contrast_core::similarity::{Similarity, DEFAULT_THRESHOLD};
use contrast_core::synthetic::{cheater_fixture, shipped_planted, PLANTED_NAME, PLANTED_PAIRS};

fn shipped_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/planted_200.jsonl")
}

#[test]
fn shipped_file_matches_generator() {
    let (dataset, _) = shipped_planted();
    let dir = tempfile::tempdir().unwrap();
    let fresh = dir.path().join("planted.jsonl");
    ingest::write_dataset(&dataset, &fresh).unwrap();
    let shipped = std::fs::read(shipped_path()).expect("data/planted_200.jsonl is shipped");
    assert!(shipped == std::fs::read(&fresh).unwrap(), "regenerate data/planted_200.jsonl");

    let (loaded, report) = ingest::load_dataset(&IngestConfig {
        path: shipped_path(),
        format: Format::CanonicalJsonl,
        dataset_name: PLANTED_NAME.into(),
        split: Split::Eval,
    })
    .unwrap();
    assert_eq!(report.dropped_total(), 0);
    assert_eq!(loaded.fingerprint(), dataset.fingerprint());
}

#[test]
fn planted_pairs_are_the_whole_graph() {
    let (dataset, planted) = shipped_planted();
    let sim = Similarity::exact(DEFAULT_THRESHOLD).unwrap();
    let (graph, summary) = build_graph(&dataset, &sim).unwrap();
    let edges: Vec<(String, String)> =
        graph.edges.iter().map(|e| (e.a.clone(), e.b.clone())).collect();
    assert_eq!(edges, planted);
    assert_eq!(summary.gold_gold_collisions, 0);

    let matching = solve(&graph, Solver::BlossomExact).unwrap();
    assert_eq!(matching.size, PLANTED_PAIRS);
    let set = assemble_contrast(&dataset, &graph, &matching, 7).unwrap();
    assert_eq!(flatten(&set).unwrap().len(), 2 * PLANTED_PAIRS);
}

#[test]
fn cheater_fixture_edges_under_trigram() {
    let f = cheater_fixture(30, 60, 11).unwrap();
    let sim = Similarity::trigram(DEFAULT_THRESHOLD).unwrap();
    let (graph, _) = build_graph(&f.dataset, &sim).unwrap();
    let edges: Vec<(String, String)> =
        graph.edges.iter().map(|e| (e.a.clone(), e.b.clone())).collect();
    assert_eq!(edges, f.planted);
    for e in &graph.edges {
        assert!(e.a_to_b.cosine >= DEFAULT_THRESHOLD && e.a_to_b.cosine < 1.0);
    }
}
