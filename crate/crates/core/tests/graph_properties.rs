use std::collections::{BTreeSet, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use contrast_core::contrast::{assemble_contrast, assemble_random_baseline, load_contrast, write_contrast};
use contrast_core::eval::responder::{question_blind_stubs, Query};
use contrast_core::graph::{build_graph, edge_predicate, load_graph, write_graph};
use contrast_core::ingest::{self, Format, IngestConfig};
use contrast_core::matching::{solve, Solver};
use contrast_core::model::{flatten, Dataset, McqEntry, Split};
use contrast_core::similarity::{
    normalize, Backend, EmbeddingProvider, Similarity, SimilarityConfig, TrigramProvider,
};
use contrast_core::Result;
use proptest::prelude::*;

/// Short texts with near variants, so random datasets have plenty of
/// equivalent golds and distractors under the lexical provider.
const VOCAB: &[&str] = &[
    "rain", "rains", "the rain", "sun", "the sun", "sunlight", "snow", "snowfall", "wind",
    "winds", "cloud", "clouds", "river", "rivers",
];

fn dataset_strategy(max: usize) -> impl Strategy<Value = Dataset> {
    prop::collection::vec(
        (
            prop::sample::subsequence((0..VOCAB.len()).collect::<Vec<_>>(), 2..=4),
            any::<prop::sample::Index>(),
            any::<prop::sample::Index>(),
            0..3usize,
        ),
        2..=max,
    )
    .prop_map(|rows| {
        let entries = rows
            .into_iter()
            .enumerate()
            .map(|(i, (mut picks, shuffle, gold, source))| {
                let rot = shuffle.index(picks.len());
                picks.rotate_left(rot);
                let choices: Vec<String> = picks.iter().map(|&p| VOCAB[p].to_string()).collect();
                McqEntry {
                    id: format!("e{i:03}"),
                    dataset: format!("src{source}"),
                    question: format!("question number {i}?"),
                    answer_index: gold.index(choices.len()),
                    choices,
                    split: Split::Eval,
                }
            })
            .collect();
        Dataset::new("prop", entries).unwrap()
    })
}

/// The edge definition applied directly to every unordered pair.
fn oracle_edges(d: &Dataset, sim: &Similarity) -> BTreeSet<(String, String)> {
    let t = sim.threshold();
    let eq = |a: &str, b: &str| sim.score(a, b).unwrap() >= t;
    let hit = |gold: &str, other: &McqEntry| other.distractors().any(|(_, x)| eq(gold, x));
    let mut out = BTreeSet::new();
    for a in &d.entries {
        for b in &d.entries {
            if a.id < b.id && hit(a.gold(), b) && hit(b.gold(), a) && !eq(a.gold(), b.gold()) {
                out.insert((a.id.clone(), b.id.clone()));
            }
        }
    }
    out
}

fn edge_set(d: &Dataset, sim: &Similarity) -> BTreeSet<(String, String)> {
    build_graph(d, sim)
        .unwrap()
        .0
        .edges
        .into_iter()
        .map(|e| (e.a, e.b))
        .collect()
}

struct Counting {
    inner: TrigramProvider,
    texts: Arc<AtomicUsize>,
}

impl EmbeddingProvider for Counting {
    fn id(&self) -> &str {
        self.inner.id()
    }
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        self.texts.fetch_add(texts.len(), Ordering::SeqCst);
        self.inner.embed(texts)
    }
}

fn ask(r: &dyn contrast_core::eval::Responder, e: &McqEntry) -> bool {
    let raw = r
        .respond(&Query {
            prompt: "",
            entry: e,
            max_tokens: 8,
            temperature: 0.0,
        })
        .unwrap();
    contrast_core::eval::parse_answer(&raw, e.choices.len()).index() == Some(e.answer_index)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn graph_equals_exhaustive_definition(d in dataset_strategy(14), t in 0.5f64..1.0) {
        for sim in [Similarity::trigram(t).unwrap(), Similarity::exact(t).unwrap()] {
            let (graph, _) = build_graph(&d, &sim).unwrap();
            let got: BTreeSet<(String, String)> =
                graph.edges.iter().map(|e| (e.a.clone(), e.b.clone())).collect();
            prop_assert_eq!(&got, &oracle_edges(&d, &sim));
            let idx = d.index();
            for e in &graph.edges {
                let ann = edge_predicate(idx[e.a.as_str()], idx[e.b.as_str()], &sim).unwrap();
                let ann = ann.expect("emitted edge satisfies the predicate");
                prop_assert_eq!(&ann.forward, &e.a_to_b);
                prop_assert!(sim.score(idx[e.a.as_str()].gold(), idx[e.b.as_str()].gold()).unwrap() < t);
            }
        }
    }

    #[test]
    fn equivalence_is_symmetric(a in 0..VOCAB.len(), b in 0..VOCAB.len(), t in 0.3f64..1.0) {
        let sim = Similarity::trigram(t).unwrap();
        prop_assert_eq!(sim.score(VOCAB[a], VOCAB[b]).unwrap(), sim.score(VOCAB[b], VOCAB[a]).unwrap());
        prop_assert_eq!(sim.equivalent(VOCAB[a], VOCAB[b]).unwrap(), sim.equivalent(VOCAB[b], VOCAB[a]).unwrap());
    }

    #[test]
    fn raising_threshold_never_adds_equivalences(
        a in 0..VOCAB.len(), b in 0..VOCAB.len(), t1 in 0.3f64..1.0, t2 in 0.3f64..1.0,
    ) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let strict = Similarity::trigram(hi).unwrap().equivalent(VOCAB[a], VOCAB[b]).unwrap().0;
        let loose = Similarity::trigram(lo).unwrap().equivalent(VOCAB[a], VOCAB[b]).unwrap().0;
        prop_assert!(!strict || loose);
    }

    /// Raising the threshold only removes edges, except that the gold-gold
    /// guard is itself thresholded: an edge at the higher threshold survives
    /// at the lower one unless its golds are equivalent there.
    #[test]
    fn graph_shrinks_as_threshold_rises(d in dataset_strategy(14), t1 in 0.5f64..1.0, t2 in 0.5f64..1.0) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let loose = Similarity::trigram(lo).unwrap();
        let low_edges = edge_set(&d, &loose);
        let idx = d.index();
        for e in edge_set(&d, &Similarity::trigram(hi).unwrap()) {
            let golds = loose.score(idx[e.0.as_str()].gold(), idx[e.1.as_str()].gold()).unwrap();
            prop_assert_eq!(low_edges.contains(&e), golds < lo);
        }
    }

    #[test]
    fn provider_sees_each_text_at_most_once(d in dataset_strategy(14)) {
        let texts = Arc::new(AtomicUsize::new(0));
        let provider = Counting { inner: TrigramProvider::default(), texts: texts.clone() };
        let sim = Similarity::new(Backend::Embedding(Box::new(provider)), SimilarityConfig::default()).unwrap();
        let (graph, _) = build_graph(&d, &sim).unwrap();
        for e in &graph.edges {
            edge_predicate(d.get(&e.a).unwrap(), d.get(&e.b).unwrap(), &sim).unwrap();
        }
        let distinct: HashSet<String> =
            d.entries.iter().flat_map(|e| e.choices.iter().map(|c| normalize(c))).collect();
        prop_assert!(texts.load(Ordering::SeqCst) <= distinct.len());
    }

    #[test]
    fn mined_sets_are_structurally_sound_and_blind_stubs_score_half(
        d in dataset_strategy(14),
        seed in any::<u64>(),
    ) {
        let sim = Similarity::trigram(0.6).unwrap();
        let (graph, _) = build_graph(&d, &sim).unwrap();
        let matching = solve(&graph, Solver::BlossomExact).unwrap();
        let set = assemble_contrast(&d, &graph, &matching, seed).unwrap();
        prop_assert!(set.violations().is_empty());
        let flat = flatten(&set).unwrap();
        let questions: HashSet<&str> = flat.iter().map(|e| e.question.as_str()).collect();
        prop_assert_eq!(questions.len(), flat.len());
        for p in &set.pairs {
            prop_assert_eq!(p.first.choices.len(), 2);
            prop_assert_eq!(&p.first.choices, &p.second.choices);
            prop_assert_eq!(p.first.answer_index + p.second.answer_index, 1);
        }
        for stub in question_blind_stubs() {
            let correct = flat.iter().filter(|e| ask(stub.as_ref(), e)).count();
            prop_assert_eq!(2 * correct, flat.len(), "{}", stub.id());
        }
    }

    #[test]
    fn baseline_sets_are_structurally_sound(d in dataset_strategy(14), seed in any::<u64>()) {
        let sim = Similarity::trigram(0.85).unwrap();
        match assemble_random_baseline(&d, 1, seed, &sim) {
            Ok(set) => prop_assert!(set.violations().is_empty()),
            // a source with a single entry, or only equivalent partners
            Err(e) => prop_assert!(matches!(e, contrast_core::Error::InsufficientEntries(_))),
        }
    }

    #[test]
    fn dataset_and_graph_files_round_trip(d in dataset_strategy(10)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prop.jsonl");
        ingest::write_dataset(&d, &path).unwrap();
        let (back, report) = ingest::load_dataset(&IngestConfig {
            path: path.clone(),
            format: Format::CanonicalJsonl,
            dataset_name: "prop".into(),
            split: Split::Eval,
        }).unwrap();
        prop_assert_eq!(report.dropped_total(), 0);
        prop_assert_eq!(&back, &d);

        let sim = Similarity::trigram(0.6).unwrap();
        let (graph, _) = build_graph(&d, &sim).unwrap();
        let gpath = dir.path().join("graph.jsonl");
        write_graph(&graph, &gpath).unwrap();
        prop_assert_eq!(load_graph(&gpath).unwrap(), graph.clone());

        let matching = solve(&graph, Solver::BlossomExact).unwrap();
        if matching.size > 0 {
            let set = assemble_contrast(&d, &graph, &matching, 5).unwrap();
            let cpath = dir.path().join("set.jsonl");
            write_contrast(&set, &cpath).unwrap();
            prop_assert_eq!(load_contrast(&cpath).unwrap(), set);
        }
    }
}
