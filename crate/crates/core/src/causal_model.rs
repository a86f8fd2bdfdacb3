//! Causal states over variable contexts.
//!
//! A [`CausalState`] is a linear SEM over an ordered [`Context`]: a weighted
//! adjacency `W` (row = source, column = target, so `W[i][j]` is the weight
//! of `i -> j`) and the Cholesky factor `L` of the error covariance
//! `M = L Lᵀ`.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;

pub use crate::linalg::frobenius_norm;

/// Ordered set of distinct variable indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Context(Vec<usize>);

impl Context {
    pub fn new(ids: Vec<usize>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::InvalidContext("context must be nonempty".into()));
        }
        if ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidContext(format!(
                "indices must be strictly increasing: {ids:?}"
            )));
        }
        Ok(Context(ids))
    }

    /// Builds a context from arbitrary ids, sorting and deduplicating them.
    pub fn from_unsorted(mut ids: Vec<usize>) -> Result<Self> {
        ids.sort_unstable();
        ids.dedup();
        Context::new(ids)
    }

    /// The context `{0, 1, ..., n-1}`.
    pub fn range(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidDimension("context of size 0".into()));
        }
        Ok(Context((0..n).collect()))
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, id: usize) -> bool {
        self.0.binary_search(&id).is_ok()
    }

    /// Position of `id` within this context.
    pub fn position(&self, id: usize) -> Option<usize> {
        self.0.binary_search(&id).ok()
    }

    pub fn is_subset(&self, other: &Context) -> bool {
        self.0.iter().all(|id| other.contains(*id))
    }

    /// Positions, within `self`, of every id of `sub`.
    pub fn positions_of(&self, sub: &Context) -> Result<Vec<usize>> {
        sub.0
            .iter()
            .map(|id| {
                self.position(*id).ok_or_else(|| {
                    Error::InvalidContext(format!("variable {id} is not in context {:?}", self.0))
                })
            })
            .collect()
    }

    /// Ids shared with `other`; `None` if the intersection is empty.
    pub fn intersection(&self, other: &Context) -> Option<Context> {
        let ids: Vec<usize> = self.0.iter().copied().filter(|id| other.contains(*id)).collect();
        if ids.is_empty() {
            None
        } else {
            Some(Context(ids))
        }
    }

    /// Ids of `self` not in `other` (possibly empty, hence a plain vector).
    pub fn difference(&self, other: &Context) -> Vec<usize> {
        self.0.iter().copied().filter(|id| !other.contains(*id)).collect()
    }
}

impl TryFrom<Vec<usize>> for Context {
    type Error = Error;
    fn try_from(ids: Vec<usize>) -> Result<Self> {
        Context::new(ids)
    }
}

impl From<Context> for Vec<usize> {
    fn from(c: Context) -> Self {
        c.0
    }
}

/// A presheaf section: weighted adjacency plus Cholesky factor of the error
/// covariance over a context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StateRepr", into = "StateRepr")]
pub struct CausalState {
    context: Context,
    w: Mat,
    l: Mat,
}

impl CausalState {
    /// Validates shapes and re-imposes the parameter manifold: zero diagonal
    /// on `W`, lower-triangular `L` with nonnegative diagonal. Non-finite
    /// entries are rejected.
    pub fn from_parts(context: Context, mut w: Mat, mut l: Mat) -> Result<Self> {
        let n = context.len();
        if w.shape() != (n, n) || l.shape() != (n, n) {
            return Err(Error::InvalidDimension(format!(
                "W {:?} and L {:?} must both be {n}x{n}",
                w.shape(),
                l.shape()
            )));
        }
        if w.iter().chain(l.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig("state contains non-finite entries".into()));
        }
        project_to_manifold(&mut w, &mut l);
        Ok(CausalState { context, w, l })
    }

    /// State over `context` with `W` drawn uniformly from
    /// `[-init_scale, init_scale]` (zero diagonal) and `L = I`.
    pub fn random(context: Context, init_scale: f64, seed: u64) -> Result<Self> {
        if !(init_scale >= 0.0) || !init_scale.is_finite() {
            return Err(Error::InvalidConfig(format!("init_scale must be >= 0, got {init_scale}")));
        }
        let n = context.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = Mat::zeros(n, n);
        if init_scale > 0.0 {
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        w[(i, j)] = rng.random_range(-init_scale..=init_scale);
                    }
                }
            }
        }
        Ok(CausalState { context, w, l: Mat::identity(n, n) })
    }

    pub fn context(&self) -> &Context {
        &self.context
    }

    pub fn n(&self) -> usize {
        self.context.len()
    }

    pub fn w(&self) -> &Mat {
        &self.w
    }

    pub fn l(&self) -> &Mat {
        &self.l
    }

    /// Weight of the edge between two ground ids, if both are in context.
    pub fn weight(&self, from: usize, to: usize) -> Option<f64> {
        let i = self.context.position(from)?;
        let j = self.context.position(to)?;
        Some(self.w[(i, j)])
    }

    /// Error covariance `M = L Lᵀ`, with the lower triangle mirrored into the
    /// upper so the result is exactly symmetric.
    pub fn covariance(&self) -> Mat {
        covariance_from_factor(&self.l)
    }

    /// Binary graph with an edge wherever `|W[i][j]| >= threshold`.
    pub fn discretize(&self, threshold: f64) -> BinaryGraph {
        let n = self.n();
        let mut g = BinaryGraph::empty(self.context.clone());
        for i in 0..n {
            for j in 0..n {
                if i != j && libm::fabs(self.w[(i, j)]) >= threshold {
                    g.set_edge(i, j, true);
                }
            }
        }
        g
    }

    /// Result of a restriction: `W~` may carry self-effects absorbed from
    /// hidden cycles, so its diagonal is kept.
    pub(crate) fn projected(context: Context, w: Mat, l: Mat) -> Self {
        CausalState { context, w, l }
    }

    pub fn into_parts(self) -> (Context, Mat, Mat) {
        (self.context, self.w, self.l)
    }
}

/// `n`-variable state over `{0..n-1}`; see [`CausalState::random`].
pub fn new_state(n: usize, init_scale: f64, seed: u64) -> Result<CausalState> {
    if n == 0 {
        return Err(Error::InvalidDimension("a state needs at least one variable".into()));
    }
    CausalState::random(Context::range(n)?, init_scale, seed)
}

pub(crate) fn covariance_from_factor(l: &Mat) -> Mat {
    let mut m = l * l.transpose();
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            m[(i, j)] = m[(j, i)];
        }
    }
    m
}

/// Zero diagonal on `W`; `L` lower-triangular with nonnegative diagonal.
pub(crate) fn project_to_manifold(w: &mut Mat, l: &mut Mat) {
    let n = w.nrows();
    for i in 0..n {
        w[(i, i)] = 0.0;
        for j in (i + 1)..n {
            l[(i, j)] = 0.0;
        }
        if l[(i, i)] < 0.0 {
            l[(i, i)] = 0.0;
        }
    }
}

#[derive(Serialize, Deserialize)]
struct StateRepr {
    context: Vec<usize>,
    #[serde(rename = "W")]
    w: Vec<Vec<f64>>,
    #[serde(rename = "L")]
    l: Vec<Vec<f64>>,
}

fn rows_of(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], n: usize, name: &str) -> Result<Mat> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::FormatError(format!("{name} must be a {n}x{n} array of rows")));
    }
    Ok(Mat::from_fn(n, n, |i, j| rows[i][j]))
}

impl TryFrom<StateRepr> for CausalState {
    type Error = Error;
    fn try_from(r: StateRepr) -> Result<Self> {
        let context = Context::new(r.context)?;
        let n = context.len();
        let w = from_rows(&r.w, n, "W")?;
        let l = from_rows(&r.l, n, "L")?;
        if w.iter().chain(l.iter()).any(|x| !x.is_finite()) {
            return Err(Error::FormatError("state contains non-finite entries".into()));
        }
        for i in 0..n {
            if l[(i, i)] < 0.0 || (i + 1..n).any(|j| l[(i, j)] != 0.0) {
                return Err(Error::FormatError(
                    "L must be lower-triangular with nonnegative diagonal".into(),
                ));
            }
        }
        // W is taken verbatim: restricted states may carry absorbed self-effects.
        Ok(CausalState { context, w, l })
    }
}

impl From<CausalState> for StateRepr {
    fn from(s: CausalState) -> Self {
        StateRepr { context: s.context.0.clone(), w: rows_of(&s.w), l: rows_of(&s.l) }
    }
}

/// Directed graph over a context; `adjacency[i][j]` means `i -> j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryGraph {
    context: Context,
    n: usize,
    adjacency: Vec<bool>,
}

impl BinaryGraph {
    pub fn empty(context: Context) -> Self {
        let n = context.len();
        BinaryGraph { context, n, adjacency: alloc::vec![false; n * n] }
    }

    /// Graph over `{0..n-1}` from a list of `(from, to)` positions.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = BinaryGraph::empty(Context::range(n)?);
        for &(i, j) in edges {
            if i >= n || j >= n || i == j {
                return Err(Error::InvalidDimension(format!("bad edge ({i}, {j}) for n = {n}")));
            }
            g.set_edge(i, j, true);
        }
        Ok(g)
    }

    pub fn context(&self) -> &Context {
        &self.context
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Edge test by position. The diagonal is always false.
    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.n + j]
    }

    /// Sets an edge by position; self-loops are ignored.
    pub fn set_edge(&mut self, i: usize, j: usize, present: bool) {
        if i != j {
            self.adjacency[i * self.n + j] = present;
        }
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in 0..self.n {
                if self.has_edge(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().filter(|b| **b).count()
    }

    pub fn parents(&self, j: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.has_edge(i, j)).collect()
    }

    pub fn children(&self, i: usize) -> Vec<usize> {
        (0..self.n).filter(|&j| self.has_edge(i, j)).collect()
    }

    /// Undirected degree of every node.
    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n)
            .map(|v| (0..self.n).filter(|&u| self.has_edge(u, v) || self.has_edge(v, u)).count())
            .collect()
    }

    /// DFS cycle check.
    pub fn is_acyclic(&self) -> bool {
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut state = alloc::vec![0u8; self.n];
        for root in 0..self.n {
            if state[root] != 0 {
                continue;
            }
            let mut stack: Vec<(usize, usize)> = alloc::vec![(root, 0)];
            state[root] = 1;
            while let Some(&mut (v, ref mut next)) = stack.last_mut() {
                if *next < self.n {
                    let c = *next;
                    *next += 1;
                    if self.has_edge(v, c) {
                        match state[c] {
                            1 => return false,
                            0 => {
                                state[c] = 1;
                                stack.push((c, 0));
                            }
                            _ => {}
                        }
                    }
                } else {
                    state[v] = 2;
                    stack.pop();
                }
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;

    #[test]
    fn context_rejects_unsorted_and_empty() {
        assert!(Context::new(alloc::vec![]).is_err());
        assert!(Context::new(alloc::vec![2, 1]).is_err());
        assert!(Context::new(alloc::vec![1, 1]).is_err());
        assert!(Context::new(alloc::vec![0, 3, 9]).is_ok());
    }

    #[test]
    fn zero_scale_gives_zero_weights_and_identity_factor() {
        let s = new_state(3, 0.0, 42).unwrap();
        assert_eq!(s.w(), &Mat::zeros(3, 3));
        assert_eq!(s.l(), &Mat::identity(3, 3));
    }

    #[test]
    fn single_node_state() {
        let s = new_state(1, 0.5, 7).unwrap();
        assert_eq!(s.w()[(0, 0)], 0.0);
        assert_eq!(s.l()[(0, 0)], 1.0);
    }

    #[test]
    fn zero_variables_is_an_error() {
        assert!(matches!(new_state(0, 0.1, 1), Err(Error::InvalidDimension(_))));
    }

    #[test]
    fn new_state_is_deterministic() {
        let a = new_state(6, 0.4, 99).unwrap();
        let b = new_state(6, 0.4, 99).unwrap();
        assert_eq!(a, b);
        let c = new_state(6, 0.4, 100).unwrap();
        assert_ne!(a, c);
        assert!(a.w().iter().all(|x| x.abs() <= 0.4));
    }

    #[test]
    fn covariance_of_simple_factors() {
        let ctx = Context::range(2).unwrap();
        let s = CausalState::from_parts(ctx.clone(), Mat::zeros(2, 2), Mat::identity(2, 2)).unwrap();
        assert_eq!(s.covariance(), Mat::identity(2, 2));
        let l = Mat::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 1.0]);
        let s = CausalState::from_parts(ctx, Mat::zeros(2, 2), l).unwrap();
        assert_eq!(s.covariance(), Mat::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 5.0]));
    }

    #[test]
    fn random_factor_gives_psd_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = Mat::from_fn(5, 5, |i, j| if j <= i { rng.random_range(-1.0..1.0) } else { 0.0 });
        let s = CausalState::from_parts(Context::range(5).unwrap(), Mat::zeros(5, 5), l).unwrap();
        let m = s.covariance();
        assert_eq!(m, m.transpose());
        let eig = SymmetricEigen::new(m).eigenvalues;
        assert!(eig.iter().all(|v| *v >= -1e-12), "{eig:?}");
    }

    #[test]
    fn from_parts_reprojects_parameters() {
        let w = Mat::from_row_slice(2, 2, &[0.7, 0.2, 0.1, -0.3]);
        let l = Mat::from_row_slice(2, 2, &[-1.0, 0.4, 0.5, 2.0]);
        let s = CausalState::from_parts(Context::range(2).unwrap(), w, l).unwrap();
        assert_eq!(s.w()[(0, 0)], 0.0);
        assert_eq!(s.w()[(1, 1)], 0.0);
        assert_eq!(s.l()[(0, 1)], 0.0);
        assert_eq!(s.l()[(0, 0)], 0.0);
    }

    #[test]
    fn discretize_thresholds() {
        let ctx = Context::range(2).unwrap();
        let mk = |v| {
            let w = Mat::from_row_slice(2, 2, &[0.0, v, 0.0, 0.0]);
            CausalState::from_parts(ctx.clone(), w, Mat::identity(2, 2)).unwrap()
        };
        assert!(!mk(0.29).discretize(0.3).has_edge(0, 1));
        assert!(mk(0.31).discretize(0.3).has_edge(0, 1));
        assert!(mk(-0.31).discretize(0.3).has_edge(0, 1));
        assert!(mk(0.02).discretize(0.01).has_edge(0, 1));
        assert_eq!(mk(0.0).discretize(0.3).edge_count(), 0);
    }

    #[test]
    fn frobenius_examples() {
        assert_eq!(frobenius_norm(&Mat::zeros(3, 3)), 0.0);
        assert_eq!(frobenius_norm(&Mat::from_row_slice(2, 2, &[3.0, 4.0, 0.0, 0.0])), 5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = Mat::from_fn(7, 4, |_, _| rng.random_range(-3.0..3.0));
        let mut naive = 0.0;
        for i in 0..7 {
            for j in 0..4 {
                naive += m[(i, j)] * m[(i, j)];
            }
        }
        assert!((frobenius_norm(&m).powi(2) - naive).abs() < 1e-12);
    }

    #[test]
    fn cycle_detection() {
        assert!(BinaryGraph::from_edges(3, &[(0, 1), (1, 2)]).unwrap().is_acyclic());
        assert!(!BinaryGraph::from_edges(3, &[(0, 1), (1, 2), (2, 0)]).unwrap().is_acyclic());
        assert!(!BinaryGraph::from_edges(2, &[(0, 1), (1, 0)]).unwrap().is_acyclic());
    }

    proptest! {
        #[test]
        fn thresholding_is_monotone(seed in 0u64..500, t1 in 0.01f64..1.0, dt in 0.0f64..1.0) {
            let s = new_state(5, 1.0, seed).unwrap();
            let coarse = s.discretize(t1 + dt);
            let fine = s.discretize(t1);
            for (i, j) in coarse.edges() {
                prop_assert!(fine.has_edge(i, j));
            }
        }
    }
}
