//! The equivalence graph: one vertex per entry, an edge wherever each
//! entry's gold answer is equivalent to a distractor of the other.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, McqEntry, WitnessMatch};
use crate::similarity::Similarity;

/// Witnesses for an unordered pair, oriented as the pair was queried.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeAnnotation {
    /// First entry's gold against the best-matching distractor of the second.
    pub forward: WitnessMatch,
    /// Second entry's gold against the best-matching distractor of the first.
    pub backward: WitnessMatch,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PairOutcome {
    Edge(EdgeAnnotation),
    /// At most one direction found an equivalent distractor.
    NoMatch,
    /// Both directions matched but the two gold answers are themselves
    /// equivalent, so the derived choice pair would be indistinguishable.
    GoldCollision { cosine: f64 },
}

fn best_witness(gold: &str, other: &McqEntry, sim: &Similarity) -> Result<Option<WitnessMatch>> {
    let mut best: Option<WitnessMatch> = None;
    for (_, distractor) in other.distractors() {
        let s = sim.score(gold, distractor)?;
        if s >= sim.threshold() && best.as_ref().is_none_or(|b| s > b.cosine) {
            best = Some(WitnessMatch {
                gold: gold.to_string(),
                distractor: distractor.to_string(),
                cosine: s,
            });
        }
    }
    Ok(best)
}

/// Full pair classification, including the gold-gold collision guard.
pub fn evaluate_pair(first: &McqEntry, second: &McqEntry, sim: &Similarity) -> Result<PairOutcome> {
    if first.id == second.id {
        return Ok(PairOutcome::NoMatch);
    }
    let Some(forward) = best_witness(first.gold(), second, sim)? else {
        return Ok(PairOutcome::NoMatch);
    };
    let Some(backward) = best_witness(second.gold(), first, sim)? else {
        return Ok(PairOutcome::NoMatch);
    };
    let (collide, cosine) = sim.equivalent(first.gold(), second.gold())?;
    if collide {
        return Ok(PairOutcome::GoldCollision { cosine });
    }
    Ok(PairOutcome::Edge(EdgeAnnotation { forward, backward }))
}

/// The edge annotation for `(first, second)`, if the pair forms an edge.
pub fn edge_predicate(
    first: &McqEntry,
    second: &McqEntry,
    sim: &Similarity,
) -> Result<Option<EdgeAnnotation>> {
    Ok(match evaluate_pair(first, second, sim)? {
        PairOutcome::Edge(a) => Some(a),
        _ => None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphHeader {
    pub provider_id: String,
    pub threshold: f64,
    pub normalized: bool,
    pub dataset_fingerprint: String,
    #[serde(default)]
    pub config_fingerprint: Option<String>,
}

/// Undirected edge with `a < b`; `a_to_b` is `a`'s gold matched against a
/// distractor of `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: String,
    pub b: String,
    pub a_to_b: WitnessMatch,
    pub b_to_a: WitnessMatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceGraph {
    pub header: GraphHeader,
    /// Sorted entry ids.
    pub vertices: Vec<String>,
    /// Sorted by `(a, b)`.
    pub edges: Vec<Edge>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct GraphSummary {
    pub vertices: usize,
    pub edges: usize,
    pub gold_gold_collisions: usize,
    /// degree -> number of vertices with that degree
    pub degree_histogram: BTreeMap<usize, usize>,
}

impl EquivalenceGraph {
    /// Checks the structural invariants: sorted unique vertices, no self
    /// loops, known endpoints, no repeated edges.
    pub fn check(&self) -> Result<()> {
        let vs: HashSet<&str> = self.vertices.iter().map(|s| s.as_str()).collect();
        if vs.len() != self.vertices.len() {
            return Err(Error::InvalidGraph("duplicate vertex".into()));
        }
        let mut seen = HashSet::new();
        for e in &self.edges {
            let name = format!("({}, {})", e.a, e.b);
            if e.a == e.b {
                return Err(Error::InvalidGraph(format!("self-loop {name}")));
            }
            for end in [&e.a, &e.b] {
                if !vs.contains(end.as_str()) {
                    return Err(Error::InvalidGraph(format!(
                        "edge {name} references unknown vertex `{end}`"
                    )));
                }
            }
            let key = if e.a < e.b { (&e.a, &e.b) } else { (&e.b, &e.a) };
            if !seen.insert(key) {
                return Err(Error::InvalidGraph(format!("edge {name} appears twice")));
            }
        }
        Ok(())
    }

    pub fn summary(&self) -> GraphSummary {
        let mut degree: HashMap<&str, usize> =
            self.vertices.iter().map(|v| (v.as_str(), 0)).collect();
        for e in &self.edges {
            *degree.entry(&e.a).or_default() += 1;
            *degree.entry(&e.b).or_default() += 1;
        }
        let mut hist = BTreeMap::new();
        for d in degree.values() {
            *hist.entry(*d).or_default() += 1;
        }
        GraphSummary {
            vertices: self.vertices.len(),
            edges: self.edges.len(),
            gold_gold_collisions: 0,
            degree_histogram: hist,
        }
    }

    pub fn edge(&self, a: &str, b: &str) -> Option<&Edge> {
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        self.edges
            .binary_search_by(|e| (e.a.as_str(), e.b.as_str()).cmp(&(a, b)))
            .ok()
            .map(|i| &self.edges[i])
    }
}

/// Builds the graph over every unordered pair of entries.
///
/// Pair evaluation is restricted to a shortlist: pairs where each gold's key
/// scores at or above the threshold against some distractor key of the
/// other entry. Scores come from the same cached vectors as
/// [`edge_predicate`], so the shortlist drops nothing the predicate would
/// accept.
pub fn build_graph(dataset: &Dataset, sim: &Similarity) -> Result<(EquivalenceGraph, GraphSummary)> {
    dataset.check()?;
    let mut entries: Vec<&McqEntry> = dataset.entries.iter().collect();
    entries.sort_by(|a, b| a.id.cmp(&b.id));

    sim.prepare(entries.iter().flat_map(|e| e.choices.iter().map(|c| c.as_str())))?;

    // distractor key -> entries listing it as a distractor
    let mut holders: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, e) in entries.iter().enumerate() {
        for (_, d) in e.distractors() {
            holders.entry(sim.key(d)).or_default().push(i);
        }
    }
    let distractor_keys: Vec<String> = holders.keys().cloned().collect();
    let gold_keys: Vec<String> = entries
        .iter()
        .map(|e| sim.key(e.gold()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let hits = sim.matches_above(&gold_keys, &distractor_keys)?;
    let gold_hits: HashMap<&str, &Vec<(usize, f64)>> =
        gold_keys.iter().map(|k| k.as_str()).zip(&hits).collect();

    let mut directed: HashSet<(usize, usize)> = HashSet::new();
    for (i, e) in entries.iter().enumerate() {
        let key = sim.key(e.gold());
        for &(d, _) in gold_hits[key.as_str()] {
            for &j in &holders[&distractor_keys[d]] {
                if j != i {
                    directed.insert((i, j));
                }
            }
        }
    }
    let mut candidates: Vec<(usize, usize)> = directed
        .iter()
        .filter(|&&(i, j)| i < j && directed.contains(&(j, i)))
        .copied()
        .collect();
    candidates.sort_unstable();

    let outcomes: Vec<PairOutcome> = candidates
        .par_iter()
        .map(|&(i, j)| evaluate_pair(entries[i], entries[j], sim))
        .collect::<Result<_>>()?;

    let mut edges = Vec::new();
    let mut collisions = 0;
    for (&(i, j), outcome) in candidates.iter().zip(outcomes) {
        match outcome {
            PairOutcome::Edge(ann) => edges.push(Edge {
                a: entries[i].id.clone(),
                b: entries[j].id.clone(),
                a_to_b: ann.forward,
                b_to_a: ann.backward,
            }),
            PairOutcome::GoldCollision { cosine } => {
                collisions += 1;
                log::debug!(
                    "gold-gold collision between {} and {} (cosine {cosine:.4})",
                    entries[i].id,
                    entries[j].id
                );
            }
            PairOutcome::NoMatch => {}
        }
    }
    if collisions > 0 {
        log::info!("rejected {collisions} candidate edges on gold-gold collision");
    }

    let graph = EquivalenceGraph {
        header: GraphHeader {
            provider_id: sim.backend_id().to_string(),
            threshold: sim.threshold(),
            normalized: sim.config().normalize,
            dataset_fingerprint: dataset.fingerprint(),
            config_fingerprint: None,
        },
        vertices: entries.iter().map(|e| e.id.clone()).collect(),
        edges,
    };
    let mut summary = graph.summary();
    summary.gold_gold_collisions = collisions;
    Ok((graph, summary))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum GraphLine {
    Header(GraphHeader),
    Vertex { id: String },
    Edge(Edge),
}

/// One JSON object per line: a header, then `vertex` lines, then `edge` lines.
pub fn write_graph(graph: &EquivalenceGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_graph_to(graph, &mut w).map_err(|e| match e {
        Error::Json(j) if j.is_io() => Error::io(path, j.into()),
        other => other,
    })?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_graph_to(graph: &EquivalenceGraph, w: &mut impl Write) -> Result<()> {
    let mut line = |l: &GraphLine| -> Result<()> {
        serde_json::to_writer(&mut *w, l)?;
        w.write_all(b"\n").map_err(serde_json::Error::io)?;
        Ok(())
    };
    line(&GraphLine::Header(graph.header.clone()))?;
    for v in &graph.vertices {
        line(&GraphLine::Vertex { id: v.clone() })?;
    }
    for e in &graph.edges {
        line(&GraphLine::Edge(e.clone()))?;
    }
    Ok(())
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<EquivalenceGraph> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let malformed = |line: usize, reason: String| Error::Malformed {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut header = None;
    let mut vertices = Vec::new();
    let mut edges = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: GraphLine =
            serde_json::from_str(&line).map_err(|e| malformed(n + 1, e.to_string()))?;
        match parsed {
            GraphLine::Header(h) => {
                if header.replace(h).is_some() {
                    return Err(malformed(n + 1, "second header".into()));
                }
            }
            GraphLine::Vertex { id } => vertices.push(id),
            GraphLine::Edge(mut e) => {
                if e.a > e.b {
                    std::mem::swap(&mut e.a, &mut e.b);
                    std::mem::swap(&mut e.a_to_b, &mut e.b_to_a);
                }
                edges.push(e)
            }
        }
    }
    let header = header.ok_or_else(|| malformed(1, "missing header".into()))?;
    vertices.sort();
    edges.sort_by(|x, y| (&x.a, &x.b).cmp(&(&y.a, &y.b)));
    let graph = EquivalenceGraph {
        header,
        vertices,
        edges,
    };
    graph.check()?;
    Ok(graph)
}
