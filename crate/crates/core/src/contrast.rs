//! Contrast-set assembly from a matching, the random-partner baseline, and
//! summary statistics.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::EquivalenceGraph;
use crate::ingest::{self, Format, IngestConfig};
use crate::matching::Matching;
use crate::model::{
    flatten, ContrastSet, Dataset, EntryPair, McqEntry, Provenance, Split, WitnessMatch,
};
use crate::similarity::{normalize, Similarity};

pub const BASELINE_SOLVER: &str = "random_baseline";

fn pair_id(k: usize) -> String {
    format!("p{k:05}")
}

/// Two derived entries over one shared, seeded ordering of the two golds.
fn make_pair(
    k: usize,
    first: &McqEntry,
    second: &McqEntry,
    rng: &mut ChaCha8Rng,
    witnesses: Option<(WitnessMatch, WitnessMatch)>,
) -> Result<EntryPair> {
    if normalize(first.gold()) == normalize(second.gold()) {
        return Err(Error::GoldCollision(first.id.clone(), second.id.clone()));
    }
    let swap: bool = rng.random();
    let choices = if swap {
        vec![second.gold().to_string(), first.gold().to_string()]
    } else {
        vec![first.gold().to_string(), second.gold().to_string()]
    };
    let id = pair_id(k);
    let derive = |src: &McqEntry, slot: usize, answer_index: usize| McqEntry {
        id: format!("{id}#{slot}"),
        dataset: src.dataset.clone(),
        question: src.question.clone(),
        choices: choices.clone(),
        answer_index,
        split: Split::Eval,
    };
    Ok(EntryPair {
        first: derive(first, 0, usize::from(swap)),
        second: derive(second, 1, usize::from(!swap)),
        pair_id: id,
        source_ids: (first.id.clone(), second.id.clone()),
        witnesses,
    })
}

fn finish(pairs: Vec<EntryPair>, provenance: Provenance) -> Result<ContrastSet> {
    let set = ContrastSet { pairs, provenance };
    let violations = set.violations();
    if violations.is_empty() {
        Ok(set)
    } else {
        Err(Error::InvalidContrastSet(violations))
    }
}

/// Turns every matched edge into an entry pair.
pub fn assemble_contrast(
    dataset: &Dataset,
    graph: &EquivalenceGraph,
    matching: &Matching,
    seed: u64,
) -> Result<ContrastSet> {
    let fingerprint = dataset.fingerprint();
    if graph.header.dataset_fingerprint != fingerprint {
        return Err(Error::FingerprintMismatch(
            "graph was built from a different dataset".into(),
        ));
    }
    matching.check(graph)?;
    let index = dataset.index();
    let mut edges: Vec<(&str, &str)> = matching
        .edges
        .iter()
        .map(|(a, b)| if a <= b { (a.as_str(), b.as_str()) } else { (b.as_str(), a.as_str()) })
        .collect();
    edges.sort_unstable();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(edges.len());
    for (k, (a, b)) in edges.into_iter().enumerate() {
        let ea = index.get(a).ok_or_else(|| Error::UnknownEntry(a.to_string()))?;
        let eb = index.get(b).ok_or_else(|| Error::UnknownEntry(b.to_string()))?;
        let edge = graph.edge(a, b).expect("checked against graph");
        let witnesses = (edge.a_to_b.clone(), edge.b_to_a.clone());
        pairs.push(make_pair(k, ea, eb, &mut rng, Some(witnesses))?);
    }
    finish(
        pairs,
        Provenance {
            source_dataset: dataset.name.clone(),
            source_fingerprint: fingerprint,
            similarity_backend: graph.header.provider_id.clone(),
            threshold: Some(graph.header.threshold),
            solver: matching.solver.id().to_string(),
            seed,
            config_fingerprint: None,
        },
    )
}

/// Pairs each anchor with a partner drawn uniformly from unused entries of
/// the anchor's source dataset. Partners whose gold is equivalent to the
/// anchor's gold are re-drawn.
pub fn random_baseline_for(
    dataset: &Dataset,
    anchors: &[String],
    seed: u64,
    sim: &Similarity,
) -> Result<ContrastSet> {
    dataset.check()?;
    let index = dataset.index();
    let mut sorted: Vec<&str> = anchors.iter().map(|s| s.as_str()).collect();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != anchors.len() {
        return Err(Error::Config("anchor ids repeat".into()));
    }
    let mut by_source: BTreeMap<&str, Vec<&McqEntry>> = BTreeMap::new();
    let mut by_id: Vec<&McqEntry> = dataset.entries.iter().collect();
    by_id.sort_by(|a, b| a.id.cmp(&b.id));
    for e in by_id {
        by_source.entry(e.dataset.as_str()).or_default().push(e);
    }
    let mut used: HashSet<&str> = sorted.iter().copied().collect();
    let mut questions: HashSet<&str> = HashSet::new();
    for a in &sorted {
        let e = index.get(a).ok_or_else(|| Error::UnknownEntry(a.to_string()))?;
        questions.insert(e.question.as_str());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(sorted.len());
    for (k, a) in sorted.iter().enumerate() {
        let anchor = index[a];
        let mut pool: Vec<&McqEntry> = by_source[anchor.dataset.as_str()]
            .iter()
            .copied()
            .filter(|e| !used.contains(e.id.as_str()) && !questions.contains(e.question.as_str()))
            .collect();
        let partner = loop {
            let Some(&candidate) = pool.choose(&mut rng) else {
                return Err(Error::InsufficientEntries(format!(
                    "no partner left for `{}` in source `{}`",
                    anchor.id, anchor.dataset
                )));
            };
            let (collide, _) = sim.equivalent(anchor.gold(), candidate.gold())?;
            if !collide {
                break candidate;
            }
            log::debug!("re-drawing partner for {}: {} collides", anchor.id, candidate.id);
            pool.retain(|e| e.id != candidate.id);
        };
        used.insert(partner.id.as_str());
        questions.insert(partner.question.as_str());
        pairs.push(make_pair(k, anchor, partner, &mut rng, None)?);
    }
    finish(
        pairs,
        Provenance {
            source_dataset: dataset.name.clone(),
            source_fingerprint: dataset.fingerprint(),
            similarity_backend: sim.backend_id().to_string(),
            threshold: Some(sim.threshold()),
            solver: BASELINE_SOLVER.to_string(),
            seed,
            config_fingerprint: None,
        },
    )
}

/// Samples `n_pairs` anchors (seeded, without replacement) and pairs each
/// with a random partner from the same source dataset.
pub fn assemble_random_baseline(
    dataset: &Dataset,
    n_pairs: usize,
    seed: u64,
    sim: &Similarity,
) -> Result<ContrastSet> {
    if 2 * n_pairs > dataset.len() {
        return Err(Error::InsufficientEntries(format!(
            "{n_pairs} pairs need {} entries, dataset has {}",
            2 * n_pairs,
            dataset.len()
        )));
    }
    let mut ids: Vec<&String> = dataset.entries.iter().map(|e| &e.id).collect();
    ids.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5a5_a5a5_a5a5_a5a5);
    let anchors: Vec<String> = ids
        .choose_multiple(&mut rng, n_pairs)
        .map(|s| (*s).clone())
        .collect();
    random_baseline_for(dataset, &anchors, seed, sim)
}

pub const WITNESS_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ContrastStats {
    pub pairs: usize,
    pub questions: usize,
    /// Derived questions per source dataset tag.
    pub per_source: BTreeMap<String, usize>,
    /// Pairs whose first entry has its gold at position 0.
    pub first_gold_at_a: usize,
    pub first_gold_at_a_fraction: f64,
    /// Flattened gold positions: [position 0, position 1].
    pub gold_positions: [usize; 2],
    /// Fraction of flattened golds at position 0.
    pub positional_balance: f64,
    /// Witness cosines in ten bins over [0, 1]; negatives land in the first.
    pub witness_histogram: [usize; WITNESS_BINS],
}

pub fn contrast_stats(contrast: &ContrastSet) -> ContrastStats {
    let mut s = ContrastStats::default();
    for p in &contrast.pairs {
        s.pairs += 1;
        for e in [&p.first, &p.second] {
            s.questions += 1;
            *s.per_source.entry(e.dataset.clone()).or_default() += 1;
            if e.answer_index < 2 {
                s.gold_positions[e.answer_index] += 1;
            }
        }
        if p.first.answer_index == 0 {
            s.first_gold_at_a += 1;
        }
        if let Some((x, y)) = p.edge_similarity() {
            for c in [x, y] {
                let bin = ((c.max(0.0) * WITNESS_BINS as f64) as usize).min(WITNESS_BINS - 1);
                s.witness_histogram[bin] += 1;
            }
        }
    }
    if s.pairs > 0 {
        s.first_gold_at_a_fraction = s.first_gold_at_a as f64 / s.pairs as f64;
        s.positional_balance = s.gold_positions[0] as f64 / s.questions as f64;
    }
    s
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PairMeta {
    pair_id: String,
    source_ids: (String, String),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    witnesses: Option<(WitnessMatch, WitnessMatch)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Sidecar {
    provenance: Provenance,
    pairs: Vec<PairMeta>,
}

/// `set.jsonl` -> `set.pairs.json`
pub fn sidecar_path(records: &Path) -> PathBuf {
    records.with_extension("pairs.json")
}

/// Writes the flattened entries in the canonical dataset format plus the
/// pair-metadata sidecar next to it.
pub fn write_contrast(contrast: &ContrastSet, records: impl AsRef<Path>) -> Result<()> {
    let records = records.as_ref();
    let entries = flatten(contrast)?;
    ingest::write_entries(&entries, records)?;
    let sidecar = Sidecar {
        provenance: contrast.provenance.clone(),
        pairs: contrast
            .pairs
            .iter()
            .map(|p| PairMeta {
                pair_id: p.pair_id.clone(),
                source_ids: p.source_ids.clone(),
                witnesses: p.witnesses.clone(),
            })
            .collect(),
    };
    let path = sidecar_path(records);
    let mut text = serde_json::to_string_pretty(&sidecar)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn load_contrast(records: impl AsRef<Path>) -> Result<ContrastSet> {
    let records = records.as_ref();
    let side_path = sidecar_path(records);
    let text = fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Malformed {
        path: side_path.clone(),
        line: e.line(),
        reason: e.to_string(),
    })?;
    let (ds, _) = ingest::load_dataset(&IngestConfig {
        path: records.to_path_buf(),
        format: Format::CanonicalJsonl,
        dataset_name: sidecar.provenance.source_dataset.clone(),
        split: Split::Eval,
    })?;
    let mut by_id: HashMap<String, McqEntry> =
        ds.entries.into_iter().map(|e| (e.id.clone(), e)).collect();
    let mut pairs = Vec::with_capacity(sidecar.pairs.len());
    for meta in sidecar.pairs {
        let mut take = |slot: usize| {
            let id = format!("{}#{slot}", meta.pair_id);
            by_id.remove(&id).ok_or(Error::UnknownEntry(id))
        };
        let first = take(0)?;
        let second = take(1)?;
        pairs.push(EntryPair {
            pair_id: meta.pair_id,
            first,
            second,
            source_ids: meta.source_ids,
            witnesses: meta.witnesses,
        });
    }
    if let Some(stray) = by_id.keys().min() {
        return Err(Error::InvalidContrastSet(vec![format!(
            "record `{stray}` belongs to no pair"
        )]));
    }
    finish(pairs, sidecar.provenance)
}
