//! Structural comparison of an estimated graph against a ground truth.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::causal_model::BinaryGraph;
use crate::error::{Error, Result};

fn same_size(a: &BinaryGraph, b: &BinaryGraph) -> Result<usize> {
    if a.n() != b.n() {
        return Err(Error::InvalidComparison(format!("graphs have {} and {} nodes", a.n(), b.n())));
    }
    Ok(a.n())
}

/// Structural Hamming distance over unordered pairs: a missing or extra
/// adjacency costs 1, a reversed edge costs 1.
pub fn shd(estimated: &BinaryGraph, truth: &BinaryGraph) -> Result<usize> {
    let n = same_size(estimated, truth)?;
    let mut total = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            let e = (estimated.has_edge(i, j), estimated.has_edge(j, i));
            let t = (truth.has_edge(i, j), truth.has_edge(j, i));
            let e_adj = e.0 || e.1;
            let t_adj = t.0 || t.1;
            if e_adj != t_adj || (e_adj && e != t) {
                total += 1;
            }
        }
    }
    Ok(total)
}

/// F1 over directed edges; 0 when there is no true positive.
pub fn f1(estimated: &BinaryGraph, truth: &BinaryGraph) -> Result<f64> {
    let n = same_size(estimated, truth)?;
    let (mut tp, mut fp, mut fnn) = (0usize, 0usize, 0usize);
    for i in 0..n {
        for j in 0..n {
            match (estimated.has_edge(i, j), truth.has_edge(i, j)) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fnn += 1,
                _ => {}
            }
        }
    }
    if tp == 0 {
        return Ok(0.0);
    }
    let p = tp as f64 / (tp + fp) as f64;
    let r = tp as f64 / (tp + fnn) as f64;
    Ok(2.0 * p * r / (p + r))
}

/// Nodes reachable from `i` by directed paths, `i` included.
pub fn descendants(g: &BinaryGraph, i: usize) -> Vec<bool> {
    reach(g, &[i], |g, v| g.children(v))
}

/// Nodes with a directed path into any of `targets`, the targets included.
pub fn ancestors(g: &BinaryGraph, targets: &[usize]) -> Vec<bool> {
    reach(g, targets, |g, v| g.parents(v))
}

fn reach(g: &BinaryGraph, start: &[usize], next: impl Fn(&BinaryGraph, usize) -> Vec<usize>) -> Vec<bool> {
    let mut seen = vec![false; g.n()];
    let mut stack: Vec<usize> = start.to_vec();
    while let Some(v) = stack.pop() {
        if seen[v] {
            continue;
        }
        seen[v] = true;
        stack.extend(next(g, v).into_iter().filter(|&u| !seen[u]));
    }
    seen
}

/// Bayes-ball reachability: whether every path between `x` and `y` is
/// blocked by `z`.
pub fn d_separated(g: &BinaryGraph, x: usize, y: usize, z: &[usize]) -> bool {
    let n = g.n();
    let mut in_z = vec![false; n];
    for &v in z {
        in_z[v] = true;
    }
    let anc_z = ancestors(g, z);
    // visited[v][0]: arrived from a child (moving up); [1]: from a parent
    let mut visited = vec![[false; 2]; n];
    let mut stack = vec![(x, 0usize)];
    while let Some((v, dir)) = stack.pop() {
        if visited[v][dir] {
            continue;
        }
        visited[v][dir] = true;
        if v == y && !in_z[v] {
            return false;
        }
        if dir == 0 {
            if !in_z[v] {
                stack.extend(g.parents(v).into_iter().map(|p| (p, 0)));
                stack.extend(g.children(v).into_iter().map(|c| (c, 1)));
            }
        } else {
            if !in_z[v] {
                stack.extend(g.children(v).into_iter().map(|c| (c, 1)));
            }
            if anc_z[v] {
                stack.extend(g.parents(v).into_iter().map(|p| (p, 0)));
            }
        }
    }
    true
}

/// Whether `z` is a valid adjustment set for the effect of `i` on `j` in
/// the DAG `g` (generalized back-door criterion).
pub fn is_valid_adjustment(g: &BinaryGraph, i: usize, j: usize, z: &[usize]) -> bool {
    let de_i = descendants(g, i);
    let an_j = ancestors(g, &[j]);
    let on_causal: Vec<usize> = (0..g.n()).filter(|&c| c != i && de_i[c] && an_j[c]).collect();
    let forbidden = reach(g, &on_causal, |g, v| g.children(v));
    if z.iter().any(|&v| forbidden[v] || v == i) {
        return false;
    }
    let mut cut = g.clone();
    for &c in &on_causal {
        cut.set_edge(i, c, false);
    }
    d_separated(&cut, i, j, z)
}

/// Structural intervention distance: ordered pairs `(i, j)` whose
/// interventional distribution `p(j | do(i))` is wrongly inferred when
/// adjusting for the parents of `i` in the estimated graph.
pub fn sid(estimated: &BinaryGraph, truth: &BinaryGraph) -> Result<usize> {
    let n = same_size(estimated, truth)?;
    if !estimated.is_acyclic() || !truth.is_acyclic() {
        return Err(Error::InvalidComparison("SID needs acyclic graphs".into()));
    }
    let mut count = 0;
    for i in 0..n {
        let pa = estimated.parents(i);
        let de_i = descendants(truth, i);
        for j in 0..n {
            if i == j {
                continue;
            }
            let wrong = if pa.contains(&j) {
                // the estimate says i has no effect on j
                de_i[j]
            } else {
                !is_valid_adjustment(truth, i, j, &pa)
            };
            if wrong {
                count += 1;
            }
        }
    }
    Ok(count)
}
