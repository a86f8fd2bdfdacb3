//! Seeded synthetic ground truths.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::causal_model::{BinaryGraph, CausalState, Context};
use crate::error::{Error, Result};
use crate::latent_projection::{project, DEFAULT_EPS};
use crate::linalg::Mat;

/// Edge probability of the DAG behind [`gen_latent`].
pub const LATENT_EDGE_PROB: f64 = 0.15;

/// Threshold that turns the projected latent model into a ground truth.
pub const LATENT_EDGE_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub graph: BinaryGraph,
    /// Observed pairs `(a, b)`, `a < b`, with a common hidden parent.
    pub latent_pairs: Vec<(usize, usize)>,
}

impl GroundTruth {
    pub fn new(graph: BinaryGraph, latent_pairs: Vec<(usize, usize)>) -> Result<Self> {
        if !graph.is_acyclic() {
            return Err(Error::InvalidComparison("ground truth must be acyclic".into()));
        }
        if latent_pairs.iter().any(|&(a, b)| a >= graph.n() || b >= graph.n() || a == b) {
            return Err(Error::InvalidContext("latent pair outside the graph".into()));
        }
        Ok(GroundTruth { graph, latent_pairs })
    }
}

fn er_edges(order: &[usize], p: f64, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for a in 0..order.len() {
        for b in (a + 1)..order.len() {
            if rng.random::<f64>() < p {
                edges.push((order[a], order[b]));
            }
        }
    }
    edges
}

/// Erdős–Rényi DAG: forward pairs of a random topological order are kept
/// independently with probability `p`.
pub fn gen_er(n: usize, p: f64, seed: u64) -> Result<GroundTruth> {
    if n == 0 {
        return Err(Error::InvalidDimension("graph needs at least one node".into()));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidConfig(format!("edge probability must lie in (0, 1), got {p}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let edges = er_edges(&order, p, &mut rng);
    GroundTruth::new(BinaryGraph::from_edges(n, &edges)?, Vec::new())
}

/// Preferential attachment: node `v` links from `round(avg_degree / 2)`
/// distinct earlier nodes drawn with probability proportional to degree + 1.
/// Edges point from old to new nodes.
pub fn gen_sf(n: usize, avg_degree: f64, seed: u64) -> Result<GroundTruth> {
    if n == 0 {
        return Err(Error::InvalidDimension("graph needs at least one node".into()));
    }
    if !(avg_degree >= 1.0 && avg_degree.is_finite()) {
        return Err(Error::InvalidConfig(format!("avg_degree must be >= 1, got {avg_degree}")));
    }
    let m = (libm::round(avg_degree / 2.0) as usize).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut degree = alloc::vec![0usize; n];
    let mut edges = Vec::new();
    for v in 1..n {
        let mut chosen: Vec<usize> = Vec::new();
        while chosen.len() < m.min(v) {
            let total: usize = (0..v).filter(|u| !chosen.contains(u)).map(|u| degree[u] + 1).sum();
            let mut ticket = rng.random_range(0..total);
            let pick = (0..v)
                .filter(|u| !chosen.contains(u))
                .find(|&u| {
                    let w = degree[u] + 1;
                    if ticket < w {
                        true
                    } else {
                        ticket -= w;
                        false
                    }
                })
                .expect("ticket falls inside the total weight");
            chosen.push(pick);
        }
        for u in chosen {
            degree[u] += 1;
            degree[v] += 1;
            edges.push((u, v));
        }
    }
    GroundTruth::new(BinaryGraph::from_edges(n, &edges)?, Vec::new())
}

/// Latent-confounded linear model over `n_obs + n_latent` nodes; observed
/// ids come first. Every latent node gets at least two observed children.
/// Returns the observed ground truth (projection thresholded at 0.01) and
/// the full state (`M = I`, weights `±U(0.3, 0.9)`).
pub fn gen_latent(n_obs: usize, n_latent: usize, seed: u64) -> Result<(GroundTruth, CausalState)> {
    if n_latent == 0 {
        return Err(Error::InvalidConfig("n_latent must be >= 1".into()));
    }
    if n_obs < 2 {
        return Err(Error::InvalidConfig("latent models need at least two observed variables".into()));
    }
    let total = n_obs + n_latent;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edges = loop {
        let mut order: Vec<usize> = (0..total).collect();
        order.shuffle(&mut rng);
        let mut edges = er_edges(&order, LATENT_EDGE_PROB, &mut rng);
        let mut feasible = true;
        for pos in 0..total {
            let h = order[pos];
            if h < n_obs {
                continue;
            }
            let mut later: Vec<usize> = order[pos + 1..].iter().copied().filter(|&o| o < n_obs).collect();
            let mut have = edges.iter().filter(|&&(a, b)| a == h && b < n_obs).count();
            if later.len() < 2 {
                feasible = false;
                break;
            }
            later.shuffle(&mut rng);
            for o in later {
                if have >= 2 {
                    break;
                }
                if !edges.contains(&(h, o)) {
                    edges.push((h, o));
                    have += 1;
                }
            }
        }
        if feasible {
            break edges;
        }
    };

    let mut w = Mat::zeros(total, total);
    let mut sorted = edges.clone();
    sorted.sort_unstable();
    for &(a, b) in &sorted {
        let mag = rng.random_range(0.3..0.9);
        w[(a, b)] = if rng.random::<bool>() { mag } else { -mag };
    }
    let full = CausalState::from_parts(Context::range(total)?, w, Mat::identity(total, total))?;
    let observed = Context::range(n_obs)?;
    let projected = project(&full, &observed, DEFAULT_EPS)?;
    let graph = projected.discretize(LATENT_EDGE_THRESHOLD);

    let mut latent_pairs = Vec::new();
    for h in n_obs..total {
        let kids: Vec<usize> = (0..n_obs).filter(|&o| full.w()[(h, o)] != 0.0).collect();
        for (x, &a) in kids.iter().enumerate() {
            for &b in &kids[x + 1..] {
                latent_pairs.push((a.min(b), a.max(b)));
            }
        }
    }
    latent_pairs.sort_unstable();
    latent_pairs.dedup();
    Ok((GroundTruth::new(graph, latent_pairs)?, full))
}
