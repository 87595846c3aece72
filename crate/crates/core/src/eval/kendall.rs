//! Kendall's tau-b via Knight's O(n log n) algorithm.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Number of tied pairs within runs of equal values in a sorted sequence.
fn tied_pairs<T>(sorted: &[T], eq: impl Fn(&T, &T) -> bool) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if eq(&w[0], &w[1]) {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    if !sorted.is_empty() {
        total += run * (run - 1) / 2;
    }
    total
}

/// Sorts `v` and returns the number of strict inversions.
fn merge_count(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], buf) + merge_count(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j].total_cmp(&v[i]) == Ordering::Less {
            swaps += (mid - i) as u64;
            buf.push(v[j]);
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

fn isqrt(x: u128) -> Option<u128> {
    let r = (x as f64).sqrt() as u128;
    (r.saturating_sub(1)..=r + 1).find(|c| c * c == x)
}

/// Tau-b over paired observations.
pub fn tau_b(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::MismatchedKeys(format!(
            "{} vs {} observations",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::UndefinedTau("fewer than two observations".into()));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::UndefinedTau("NaN score".into()));
    }
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let n0 = (n as u64) * (n as u64 - 1) / 2;
    let ties_x = tied_pairs(&pairs, |a, b| a.0 == b.0);
    let ties_xy = tied_pairs(&pairs, |a, b| a.0 == b.0 && a.1 == b.1);
    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let swaps = merge_count(&mut ys, &mut Vec::with_capacity(n));
    let ties_y = tied_pairs(&ys, |a, b| a == b);
    if ties_x == n0 || ties_y == n0 {
        return Err(Error::UndefinedTau("one ranking is constant".into()));
    }
    let numerator = n0 as i128 - ties_x as i128 - ties_y as i128 + ties_xy as i128 - 2 * swaps as i128;
    let product = (n0 - ties_x) as u128 * (n0 - ties_y) as u128;
    let denominator = match isqrt(product) {
        Some(r) => r as f64,
        None => (product as f64).sqrt(),
    };
    Ok((numerator as f64 / denominator).clamp(-1.0, 1.0))
}

/// Tau-b between two score maps over the same responders.
pub fn kendall_tau(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> Result<f64> {
    if a.keys().ne(b.keys()) {
        let only_a: Vec<&String> = a.keys().filter(|k| !b.contains_key(*k)).collect();
        let only_b: Vec<&String> = b.keys().filter(|k| !a.contains_key(*k)).collect();
        return Err(Error::MismatchedKeys(format!(
            "only in first: {only_a:?}; only in second: {only_b:?}"
        )));
    }
    let x: Vec<f64> = a.values().copied().collect();
    let y: Vec<f64> = b.values().copied().collect();
    tau_b(&x, &y)
}
