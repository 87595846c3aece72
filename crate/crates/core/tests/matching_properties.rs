use std::collections::HashSet;

use contrast_core::matching::{blossom_pairs, brute_force_pairs, greedy_pairs, IndexedGraph};
use proptest::prelude::*;

/// Maximum matching size by memoised search over vertex subsets.
fn oracle_max(n: usize, edges: &[(usize, usize)]) -> usize {
    let mut adj = vec![0u32; n];
    for &(a, b) in edges {
        adj[a] |= 1 << b;
        adj[b] |= 1 << a;
    }
    let mut memo = vec![u8::MAX; 1 << n];
    fn go(free: u32, adj: &[u32], memo: &mut [u8]) -> u8 {
        if free == 0 {
            return 0;
        }
        if memo[free as usize] != u8::MAX {
            return memo[free as usize];
        }
        let v = free.trailing_zeros() as usize;
        let rest = free & !(1 << v);
        let mut best = go(rest, adj, memo);
        let mut nb = adj[v] & rest;
        while nb != 0 {
            let u = nb.trailing_zeros();
            nb &= nb - 1;
            best = best.max(1 + go(rest & !(1 << u), adj, memo));
        }
        memo[free as usize] = best;
        best
    }
    go(((1u64 << n) - 1) as u32, &adj, &mut memo) as usize
}

fn is_matching(edges: &[(usize, usize)], pairs: &[(usize, usize)]) -> bool {
    let set: HashSet<(usize, usize)> = edges.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
    let mut used = HashSet::new();
    pairs.iter().all(|&(a, b)| {
        set.contains(&(a.min(b), a.max(b))) && used.insert(a) && used.insert(b)
    })
}

/// Whether an augmenting path exists (exhaustive DFS over alternating paths).
fn has_augmenting_path(n: usize, edges: &[(usize, usize)], pairs: &[(usize, usize)]) -> bool {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut mate = vec![usize::MAX; n];
    for &(a, b) in pairs {
        mate[a] = b;
        mate[b] = a;
    }
    fn extend(v: usize, adj: &[Vec<usize>], mate: &[usize], seen: &mut Vec<bool>) -> bool {
        for &u in &adj[v] {
            if seen[u] || mate[v] == u {
                continue;
            }
            if mate[u] == usize::MAX {
                return true;
            }
            let w = mate[u];
            if seen[w] {
                continue;
            }
            seen[u] = true;
            seen[w] = true;
            if extend(w, adj, mate, seen) {
                return true;
            }
            seen[u] = false;
            seen[w] = false;
        }
        false
    }
    (0..n).filter(|&v| mate[v] == usize::MAX).any(|v| {
        let mut seen = vec![false; n];
        seen[v] = true;
        extend(v, &adj, &mate, &mut seen)
    })
}

fn graph_strategy(max_n: usize) -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (1..=max_n).prop_flat_map(|n| {
        let all: Vec<(usize, usize)> =
            (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
        let m = all.len();
        (Just(n), prop::sample::subsequence(all, 0..=m))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn blossom_is_maximum((n, edges) in graph_strategy(10)) {
        let g = IndexedGraph::new(n, edges.iter().copied());
        let pairs = blossom_pairs(&g);
        prop_assert!(is_matching(&edges, &pairs));
        prop_assert_eq!(pairs.len(), oracle_max(n, &edges));
        prop_assert!(!has_augmenting_path(n, &edges, &pairs));
    }

    #[test]
    fn greedy_is_maximal_and_half_optimal((n, edges) in graph_strategy(10)) {
        let g = IndexedGraph::new(n, edges.iter().copied());
        let pairs = greedy_pairs(&g);
        prop_assert!(is_matching(&edges, &pairs));
        let used: HashSet<usize> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
        prop_assert!(edges.iter().all(|(a, b)| used.contains(a) || used.contains(b)));
        prop_assert!(2 * pairs.len() >= oracle_max(n, &edges));
    }

    #[test]
    fn brute_force_agrees_with_blossom((n, edges) in graph_strategy(8)) {
        prop_assume!(edges.len() <= 24);
        let g = IndexedGraph::new(n, edges.iter().copied());
        let brute = brute_force_pairs(&g).unwrap();
        prop_assert!(is_matching(&edges, &brute));
        prop_assert_eq!(brute, blossom_pairs(&g));
    }

    #[test]
    fn larger_sparse_graphs_have_no_augmenting_path(
        n in 20usize..60,
        raw in prop::collection::vec((0usize..60, 0usize..60), 0..120),
    ) {
        let edges: Vec<(usize, usize)> = raw
            .into_iter()
            .map(|(a, b)| (a % n, b % n))
            .filter(|(a, b)| a != b)
            .collect();
        let g = IndexedGraph::new(n, edges.iter().copied());
        let pairs = blossom_pairs(&g);
        prop_assert!(is_matching(&edges, &pairs));
        prop_assert!(!has_augmenting_path(n, &edges, &pairs));
    }
}

#[test]
fn oracle_sanity() {
    // odd cycle of five plus a pendant: 3
    let e = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (0, 5)];
    assert_eq!(oracle_max(6, &e), 3);
    assert!(has_augmenting_path(6, &e, &[(1, 2), (3, 4)]));
    assert!(!has_augmenting_path(6, &e, &[(1, 2), (3, 4), (0, 5)]));
}
