//! Maximum-cardinality matching on the equivalence graph.
//!
//! The exact solver is Edmonds' blossom algorithm: grow an alternating tree
//! from each free vertex, contract odd cycles into their base, and augment
//! when the tree reaches another free vertex. The result is then rewritten to
//! the lexicographically smallest maximum matching under sorted vertex ids so
//! that equal inputs always give equal outputs.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EquivalenceGraph, GraphHeader};

pub const BRUTE_FORCE_EDGE_LIMIT: usize = 24;

const NONE: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    #[serde(alias = "blossom")]
    BlossomExact,
    Greedy,
    #[serde(alias = "brute")]
    BruteForce,
}

impl Solver {
    pub fn id(self) -> &'static str {
        match self {
            Solver::BlossomExact => "blossom_exact",
            Solver::Greedy => "greedy",
            Solver::BruteForce => "brute_force",
        }
    }
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl std::str::FromStr for Solver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blossom" | "blossom_exact" => Ok(Solver::BlossomExact),
            "greedy" => Ok(Solver::Greedy),
            "brute" | "brute_force" => Ok(Solver::BruteForce),
            other => Err(Error::Config(format!("unknown solver `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    pub solver: Solver,
    pub size: usize,
    /// Header of the graph this matching was computed on.
    pub graph: GraphHeader,
    #[serde(default)]
    pub config_fingerprint: Option<String>,
    /// Sorted; each pair is ordered `(smaller id, larger id)`.
    pub edges: Vec<(String, String)>,
}

impl Matching {
    /// Every edge is in `graph` and no vertex is used twice.
    pub fn check(&self, graph: &EquivalenceGraph) -> Result<()> {
        if self.size != self.edges.len() {
            return Err(Error::InvalidMatching(format!(
                "size {} but {} edges",
                self.size,
                self.edges.len()
            )));
        }
        let mut used = HashSet::new();
        for (a, b) in &self.edges {
            if graph.edge(a, b).is_none() {
                return Err(Error::InvalidMatching(format!(
                    "edge ({a}, {b}) is not in the graph"
                )));
            }
            for v in [a, b] {
                if !used.insert(v.as_str()) {
                    return Err(Error::InvalidMatching(format!("vertex `{v}` matched twice")));
                }
            }
        }
        Ok(())
    }
}

/// Graph on vertex indices `0..n`, index order = sorted id order.
#[derive(Debug, Clone)]
pub struct IndexedGraph {
    pub n: usize,
    /// Sorted `(u, v)` with `u < v`.
    pub edges: Vec<(usize, usize)>,
    pub adj: Vec<Vec<usize>>,
}

impl IndexedGraph {
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut list: Vec<(usize, usize)> = edges
            .into_iter()
            .filter(|(u, v)| u != v)
            .map(|(u, v)| (u.min(v), u.max(v)))
            .collect();
        list.sort_unstable();
        list.dedup();
        let mut adj = vec![Vec::new(); n];
        for &(u, v) in &list {
            assert!(v < n, "vertex {v} out of range");
            adj[u].push(v);
            adj[v].push(u);
        }
        for a in &mut adj {
            a.sort_unstable();
        }
        IndexedGraph { n, edges: list, adj }
    }

    fn from_graph(graph: &EquivalenceGraph) -> Result<Self> {
        graph.check()?;
        let mut ids: Vec<&str> = graph.vertices.iter().map(|s| s.as_str()).collect();
        ids.sort_unstable();
        let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, v)| (*v, i)).collect();
        Ok(Self::new(
            ids.len(),
            graph
                .edges
                .iter()
                .map(|e| (index[e.a.as_str()], index[e.b.as_str()])),
        ))
    }
}

/// Mate array from a list of matched index pairs.
fn pairs_from_mate(mate: &[usize]) -> Vec<(usize, usize)> {
    mate.iter()
        .enumerate()
        .filter(|&(u, &v)| v != NONE && u < v)
        .map(|(u, &v)| (u, v))
        .collect()
}

struct Blossom<'g> {
    adj: &'g [Vec<usize>],
    mate: Vec<usize>,
    parent: Vec<usize>,
    base: Vec<usize>,
    used: Vec<bool>,
    in_blossom: Vec<bool>,
    on_path: Vec<bool>,
    active: Vec<bool>,
    queue: VecDeque<usize>,
}

impl<'g> Blossom<'g> {
    fn new(graph: &'g IndexedGraph) -> Self {
        let n = graph.n;
        Blossom {
            adj: &graph.adj,
            mate: vec![NONE; n],
            parent: vec![NONE; n],
            base: (0..n).collect(),
            used: vec![false; n],
            in_blossom: vec![false; n],
            on_path: vec![false; n],
            active: vec![true; n],
            queue: VecDeque::new(),
        }
    }

    fn n(&self) -> usize {
        self.mate.len()
    }

    /// Lowest common ancestor of `a` and `b` in the alternating tree, in
    /// terms of blossom bases.
    fn lca(&mut self, mut a: usize, mut b: usize) -> usize {
        self.on_path.fill(false);
        loop {
            a = self.base[a];
            self.on_path[a] = true;
            if self.mate[a] == NONE {
                break;
            }
            a = self.parent[self.mate[a]];
        }
        loop {
            b = self.base[b];
            if self.on_path[b] {
                return b;
            }
            b = self.parent[self.mate[b]];
        }
    }

    fn mark_path(&mut self, mut v: usize, b: usize, mut child: usize) {
        while self.base[v] != b {
            let m = self.mate[v];
            self.in_blossom[self.base[v]] = true;
            self.in_blossom[self.base[m]] = true;
            self.parent[v] = child;
            child = m;
            v = self.parent[m];
        }
    }

    /// Searches for an augmenting path from the free vertex `root` among
    /// active vertices. Returns the free endpoint reached.
    fn find_path(&mut self, root: usize) -> Option<usize> {
        let n = self.n();
        self.used.fill(false);
        self.parent.fill(NONE);
        for (i, b) in self.base.iter_mut().enumerate() {
            *b = i;
        }
        self.queue.clear();
        self.used[root] = true;
        self.queue.push_back(root);
        while let Some(v) = self.queue.pop_front() {
            for k in 0..self.adj[v].len() {
                let to = self.adj[v][k];
                if !self.active[to] || self.base[v] == self.base[to] || self.mate[v] == to {
                    continue;
                }
                if to == root || (self.mate[to] != NONE && self.parent[self.mate[to]] != NONE) {
                    // odd cycle: contract it into its base
                    let cur = self.lca(v, to);
                    self.in_blossom.fill(false);
                    self.mark_path(v, cur, to);
                    self.mark_path(to, cur, v);
                    for i in 0..n {
                        if self.in_blossom[self.base[i]] {
                            self.base[i] = cur;
                            if !self.used[i] {
                                self.used[i] = true;
                                self.queue.push_back(i);
                            }
                        }
                    }
                } else if self.parent[to] == NONE {
                    self.parent[to] = v;
                    if self.mate[to] == NONE {
                        return Some(to);
                    }
                    let next = self.mate[to];
                    self.used[next] = true;
                    self.queue.push_back(next);
                }
            }
        }
        None
    }

    fn augment(&mut self, end: usize) {
        let mut v = end;
        while v != NONE {
            let pv = self.parent[v];
            let next = self.mate[pv];
            self.mate[v] = pv;
            self.mate[pv] = v;
            v = next;
        }
    }

    fn try_augment_from(&mut self, root: usize) -> bool {
        match self.find_path(root) {
            Some(end) => {
                self.augment(end);
                true
            }
            None => false,
        }
    }

    fn maximize(&mut self, edges: &[(usize, usize)]) {
        for &(u, v) in edges {
            if self.mate[u] == NONE && self.mate[v] == NONE {
                self.mate[u] = v;
                self.mate[v] = u;
            }
        }
        // A vertex with no augmenting path now never gains one later.
        for v in 0..self.n() {
            if self.mate[v] == NONE && !self.adj[v].is_empty() {
                self.try_augment_from(v);
            }
        }
    }

    /// Rewrites a maximum matching into the lexicographically smallest one:
    /// walk edges in sorted order and fix each edge that can still be
    /// extended to a maximum matching of the unfixed vertices.
    fn canonicalize(&mut self, edges: &[(usize, usize)]) {
        for &(u, v) in edges {
            if !self.active[u] || !self.active[v] {
                continue;
            }
            let (mu, mv) = (self.mate[u], self.mate[v]);
            if mu == v {
                self.active[u] = false;
                self.active[v] = false;
                continue;
            }
            // u and v are both free only if the matching was not maximum
            debug_assert!(mu != NONE || mv != NONE);
            if mu != NONE {
                self.mate[mu] = NONE;
            }
            if mv != NONE {
                self.mate[mv] = NONE;
            }
            self.mate[u] = v;
            self.mate[v] = u;
            self.active[u] = false;
            self.active[v] = false;
            if mu == NONE || mv == NONE {
                continue;
            }
            // Both were matched: one augmenting path from a freed mate
            // restores the size, and any such path must start at one.
            if self.try_augment_from(mu) || self.try_augment_from(mv) {
                continue;
            }
            self.active[u] = true;
            self.active[v] = true;
            self.mate[u] = mu;
            self.mate[mu] = u;
            self.mate[v] = mv;
            self.mate[mv] = v;
        }
    }
}

/// Lexicographically smallest maximum matching, as sorted index pairs.
pub fn blossom_pairs(graph: &IndexedGraph) -> Vec<(usize, usize)> {
    let mut b = Blossom::new(graph);
    b.maximize(&graph.edges);
    b.canonicalize(&graph.edges);
    pairs_from_mate(&b.mate)
}

/// Maximal matching taking edges in sorted order.
pub fn greedy_pairs(graph: &IndexedGraph) -> Vec<(usize, usize)> {
    let mut used = vec![false; graph.n];
    let mut out = Vec::new();
    for &(u, v) in &graph.edges {
        if !used[u] && !used[v] {
            used[u] = true;
            used[v] = true;
            out.push((u, v));
        }
    }
    out
}

/// Exhaustive search; returns the lexicographically smallest maximum matching.
pub fn brute_force_pairs(graph: &IndexedGraph) -> Result<Vec<(usize, usize)>> {
    let m = graph.edges.len();
    if m > BRUTE_FORCE_EDGE_LIMIT {
        return Err(Error::GraphTooLarge {
            edges: m,
            limit: BRUTE_FORCE_EDGE_LIMIT,
        });
    }
    struct Search<'a> {
        edges: &'a [(usize, usize)],
        used: Vec<bool>,
        current: Vec<usize>,
        best: Vec<usize>,
    }
    impl Search<'_> {
        // Include-first recursion meets equal-size sets in lexicographic
        // order, so only strictly larger sets replace the best.
        fn go(&mut self, i: usize) {
            if self.current.len() > self.best.len() {
                self.best = self.current.clone();
            }
            if i == self.edges.len() || self.current.len() + (self.edges.len() - i) <= self.best.len() {
                return;
            }
            let (u, v) = self.edges[i];
            if !self.used[u] && !self.used[v] {
                self.used[u] = true;
                self.used[v] = true;
                self.current.push(i);
                self.go(i + 1);
                self.current.pop();
                self.used[u] = false;
                self.used[v] = false;
            }
            self.go(i + 1);
        }
    }
    let mut s = Search {
        edges: &graph.edges,
        used: vec![false; graph.n],
        current: Vec::new(),
        best: Vec::new(),
    };
    s.go(0);
    Ok(s.best.iter().map(|&i| graph.edges[i]).collect())
}

fn to_matching(graph: &EquivalenceGraph, solver: Solver, pairs: Vec<(usize, usize)>) -> Matching {
    let mut ids: Vec<&String> = graph.vertices.iter().collect();
    ids.sort_unstable();
    let mut edges: Vec<(String, String)> = pairs
        .into_iter()
        .map(|(u, v)| (ids[u].clone(), ids[v].clone()))
        .collect();
    edges.sort();
    Matching {
        solver,
        size: edges.len(),
        graph: graph.header.clone(),
        config_fingerprint: None,
        edges,
    }
}

pub fn max_matching_blossom(graph: &EquivalenceGraph) -> Result<Matching> {
    let g = IndexedGraph::from_graph(graph)?;
    Ok(to_matching(graph, Solver::BlossomExact, blossom_pairs(&g)))
}

pub fn max_matching_greedy(graph: &EquivalenceGraph) -> Result<Matching> {
    let g = IndexedGraph::from_graph(graph)?;
    Ok(to_matching(graph, Solver::Greedy, greedy_pairs(&g)))
}

pub fn max_matching_brute(graph: &EquivalenceGraph) -> Result<Matching> {
    let g = IndexedGraph::from_graph(graph)?;
    Ok(to_matching(graph, Solver::BruteForce, brute_force_pairs(&g)?))
}

pub fn solve(graph: &EquivalenceGraph, solver: Solver) -> Result<Matching> {
    match solver {
        Solver::BlossomExact => max_matching_blossom(graph),
        Solver::Greedy => max_matching_greedy(graph),
        Solver::BruteForce => max_matching_brute(graph),
    }
}

pub fn write_matching(matching: &Matching, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(matching)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_matching(path: impl AsRef<Path>) -> Result<Matching> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        line: e.line(),
        reason: e.to_string(),
    })
}
