//! Restriction of a causal state to a sub-context by algebraic latent
//! projection.
//!
//! With the context split into observed `O` and hidden `H` blocks,
//!
//! ```text
//! A  = W_OH (I - W_HH)^-1
//! W~ = W_OO + A W_HO
//! M~ = M_OO + A M_HH Aᵀ + M_OH Aᵀ + A M_HO   ( = E M Eᵀ, E = [I  A] )
//! ```
//!
//! `I - W~` is the Schur complement of `I - W` with respect to the hidden
//! block, which is why restrictions compose.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::linalg::LU;
use nalgebra::Dyn;

use crate::causal_model::{CausalState, Context};
use crate::error::{Error, Result};
use crate::linalg::{frobenius_norm, psd_cholesky, scatter_add, spectral_radius, submatrix, Mat};

/// Regularization added to `I - W_HH` when its factorization fails.
pub const DEFAULT_EPS: f64 = 1e-6;

const POWER_ITERATIONS: usize = 100;
const POWER_TOL: f64 = 1e-10;

/// The eight blocks of `W` and `M` for an observed/hidden split.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPartition {
    pub observed: Context,
    /// Hidden ids in context order; empty when nothing is marginalized.
    pub hidden: Vec<usize>,
    pub w_oo: Mat,
    pub w_oh: Mat,
    pub w_ho: Mat,
    pub w_hh: Mat,
    pub m_oo: Mat,
    pub m_oh: Mat,
    pub m_ho: Mat,
    pub m_hh: Mat,
}

/// `A = W_OH (I - W_HH)^-1`, the total effect of each observed variable on
/// each hidden one summed over all hidden paths.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsorptionMatrix {
    pub a: Mat,
}

pub fn partition(state: &CausalState, observed: &Context) -> Result<BlockPartition> {
    let obs = state.context().positions_of(observed)?;
    let hid = complement(state.n(), &obs);
    let w = state.w();
    let m = state.covariance();
    Ok(BlockPartition {
        observed: observed.clone(),
        hidden: hid.iter().map(|&p| state.context().ids()[p]).collect(),
        w_oo: submatrix(w, &obs, &obs),
        w_oh: submatrix(w, &obs, &hid),
        w_ho: submatrix(w, &hid, &obs),
        w_hh: submatrix(w, &hid, &hid),
        m_oo: submatrix(&m, &obs, &obs),
        m_oh: submatrix(&m, &obs, &hid),
        m_ho: submatrix(&m, &hid, &obs),
        m_hh: submatrix(&m, &hid, &hid),
    })
}

pub fn absorption(p: &BlockPartition, eps: f64) -> Result<AbsorptionMatrix> {
    if p.hidden.is_empty() {
        return Ok(AbsorptionMatrix { a: Mat::zeros(p.observed.len(), 0) });
    }
    check_spectral(&p.w_hh)?;
    let solver = ShiftSolver::new(&p.w_hh, eps);
    Ok(AbsorptionMatrix { a: solver.right_solve(&p.w_oh) })
}

/// Restricts `state` to `observed`.
///
/// Restricting to the full context returns the input unchanged. Otherwise the
/// projected covariance is symmetrized, floored at `eps` in its spectrum and
/// refactored. The projected `W~` keeps its diagonal: cycles that leave an
/// observed variable and return through hidden ones register as self-effects,
/// and dropping them would break composition of restrictions.
pub fn project(state: &CausalState, observed: &Context, eps: f64) -> Result<CausalState> {
    if observed == state.context() {
        return Ok(state.clone());
    }
    let obs = state.context().positions_of(observed)?;
    let proj = Projection::compute(state.w(), &state.covariance(), &obs, eps)?;
    let l = psd_cholesky(&proj.m, eps);
    Ok(CausalState::projected(observed.clone(), proj.w, l))
}

/// Errors unless the hidden block is a contraction in spectral radius.
/// `‖W_HH‖_F < 1` is accepted without iterating.
pub fn check_spectral(w_hh: &Mat) -> Result<()> {
    if w_hh.nrows() == 0 || frobenius_norm(w_hh) < 1.0 {
        return Ok(());
    }
    let radius = spectral_radius(w_hh, POWER_ITERATIONS, POWER_TOL);
    if radius < 1.0 {
        Ok(())
    } else {
        Err(Error::NonConvergentHiddenBlock { radius })
    }
}

pub(crate) fn complement(n: usize, positions: &[usize]) -> Vec<usize> {
    let mut keep = alloc::vec![false; n];
    for &p in positions {
        keep[p] = true;
    }
    (0..n).filter(|&p| !keep[p]).collect()
}

/// LU factors of `S = I - W_HH` (shifted by `eps` only if singular) and of
/// `Sᵀ`, so that products with `S^-1` on either side are solves.
struct ShiftSolver {
    lu: LU<f64, Dyn, Dyn>,
    lu_t: LU<f64, Dyn, Dyn>,
}

impl ShiftSolver {
    fn new(w_hh: &Mat, eps: f64) -> Self {
        let h = w_hh.nrows();
        let s = Mat::identity(h, h) - w_hh;
        let lu = s.clone().lu();
        let lu_t = s.transpose().lu();
        if lu.is_invertible() && lu_t.is_invertible() {
            return ShiftSolver { lu, lu_t };
        }
        let s = s + Mat::identity(h, h) * eps;
        ShiftSolver { lu: s.clone().lu(), lu_t: s.transpose().lu() }
    }

    /// `B S^-1`.
    fn right_solve(&self, b: &Mat) -> Mat {
        if b.nrows() == 0 {
            return Mat::zeros(0, b.ncols());
        }
        self.lu_t
            .solve(&b.transpose())
            .expect("shifted hidden block is invertible")
            .transpose()
    }

    /// `B S^-ᵀ`.
    fn right_solve_transposed(&self, b: &Mat) -> Mat {
        if b.nrows() == 0 {
            return Mat::zeros(0, b.ncols());
        }
        self.lu.solve(&b.transpose()).expect("shifted hidden block is invertible").transpose()
    }
}

/// A projection evaluated at one `(W, M)` together with what is needed to
/// differentiate it.
pub struct Projection {
    n: usize,
    obs: Vec<usize>,
    hid: Vec<usize>,
    solver: Option<ShiftSolver>,
    a: Mat,
    w_ho: Mat,
    /// `M_OH + A M_HH`
    k: Mat,
    /// Projected adjacency `W~`.
    pub w: Mat,
    /// Projected covariance `M~`, symmetrized but not refactored.
    pub m: Mat,
}

impl Projection {
    /// `obs` are positions (not ids) of the observed variables in `w`.
    pub fn compute(w: &Mat, m: &Mat, obs: &[usize], eps: f64) -> Result<Self> {
        let n = w.nrows();
        if obs.iter().any(|&p| p >= n) {
            return Err(Error::InvalidContext(format!("observed positions {obs:?} out of range for n = {n}")));
        }
        let hid = complement(n, obs);
        let w_oo = submatrix(w, obs, obs);
        let m_oo = submatrix(m, obs, obs);
        if hid.is_empty() {
            return Ok(Projection {
                n,
                obs: obs.to_vec(),
                hid,
                solver: None,
                a: Mat::zeros(obs.len(), 0),
                w_ho: Mat::zeros(0, obs.len()),
                k: Mat::zeros(obs.len(), 0),
                w: w_oo,
                m: m_oo,
            });
        }
        let w_oh = submatrix(w, obs, &hid);
        let w_ho = submatrix(w, &hid, obs);
        let w_hh = submatrix(w, &hid, &hid);
        check_spectral(&w_hh)?;
        let solver = ShiftSolver::new(&w_hh, eps);
        let a = solver.right_solve(&w_oh);
        let w_proj = &w_oo + &a * &w_ho;
        let m_oh = submatrix(m, obs, &hid);
        let m_ho = submatrix(m, &hid, obs);
        let m_hh = submatrix(m, &hid, &hid);
        let k = &m_oh + &a * &m_hh;
        let raw = &m_oo + &a * &m_ho + &k * a.transpose();
        let m_proj = (&raw + raw.transpose()) * 0.5;
        Ok(Projection { n, obs: obs.to_vec(), hid, solver: Some(solver), a, w_ho, k, w: w_proj, m: m_proj })
    }

    pub fn absorption(&self) -> &Mat {
        &self.a
    }

    /// Pulls gradients on `(W~, M~)` back to full-size gradients on `(W, M)`.
    pub fn backward(&self, gw: &Mat, gm: &Mat) -> (Mat, Mat) {
        let n = self.n;
        let mut grad_w = Mat::zeros(n, n);
        let mut grad_m = Mat::zeros(n, n);
        let gs = (gm + gm.transpose()) * 0.5;
        scatter_add(&mut grad_w, &self.obs, &self.obs, gw);
        scatter_add(&mut grad_m, &self.obs, &self.obs, &gs);
        let Some(solver) = &self.solver else {
            return (grad_w, grad_m);
        };
        let at = self.a.transpose();
        // W~ = W_OO + A W_HO
        scatter_add(&mut grad_w, &self.hid, &self.obs, &(&at * gw));
        let mut grad_a = gw * self.w_ho.transpose();
        // M~ = E M Eᵀ
        grad_a += (&gs * &self.k) * 2.0;
        let gs_a = &gs * &self.a;
        scatter_add(&mut grad_m, &self.obs, &self.hid, &gs_a);
        scatter_add(&mut grad_m, &self.hid, &self.obs, &gs_a.transpose());
        scatter_add(&mut grad_m, &self.hid, &self.hid, &(&at * &gs_a));
        // A = W_OH S^-1, dA = (dW_OH + A dW_HH) S^-1
        let y = solver.right_solve_transposed(&grad_a);
        scatter_add(&mut grad_w, &self.obs, &self.hid, &y);
        scatter_add(&mut grad_w, &self.hid, &self.hid, &(&at * &y));
        (grad_w, grad_m)
    }

    /// Directional derivative of `W~` along a full-size `dW`.
    pub fn tangent_w(&self, dw: &Mat) -> Mat {
        let d_oo = submatrix(dw, &self.obs, &self.obs);
        let Some(solver) = &self.solver else {
            return d_oo;
        };
        let d_oh = submatrix(dw, &self.obs, &self.hid);
        let d_ho = submatrix(dw, &self.hid, &self.obs);
        let d_hh = submatrix(dw, &self.hid, &self.hid);
        let da = solver.right_solve(&(d_oh + &self.a * d_hh));
        d_oo + da * &self.w_ho + &self.a * d_ho
    }

    /// `E M Eᵀ` for an arbitrary full-size `M`, holding the absorption fixed.
    pub fn apply_m(&self, m: &Mat) -> Mat {
        let m_oo = submatrix(m, &self.obs, &self.obs);
        if self.solver.is_none() {
            return (&m_oo + m_oo.transpose()) * 0.5;
        }
        let m_oh = submatrix(m, &self.obs, &self.hid);
        let m_ho = submatrix(m, &self.hid, &self.obs);
        let m_hh = submatrix(m, &self.hid, &self.hid);
        let raw = m_oo + &self.a * m_ho + (m_oh + &self.a * m_hh) * self.a.transpose();
        (&raw + raw.transpose()) * 0.5
    }

    /// Adjoint of [`Projection::apply_m`].
    pub fn adjoint_m(&self, g: &Mat) -> Mat {
        self.backward(&Mat::zeros(self.obs.len(), self.obs.len()), g).1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn state(w: Mat, l: Mat) -> CausalState {
        let n = w.nrows();
        CausalState::from_parts(Context::range(n).unwrap(), w, l).unwrap()
    }

    fn ctx(ids: &[usize]) -> Context {
        Context::new(ids.to_vec()).unwrap()
    }

    fn random_state(n: usize, scale: f64, seed: u64) -> CausalState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Mat::from_fn(n, n, |i, j| if i == j { 0.0 } else { rng.random_range(-1.0..1.0) });
        let w = &w * (scale / frobenius_norm(&w));
        let l = Mat::from_fn(n, n, |i, j| {
            if i == j {
                1.0
            } else if j < i {
                rng.random_range(-0.3..0.3)
            } else {
                0.0
            }
        });
        state(w, l)
    }

    #[test]
    fn full_observation_has_empty_hidden_blocks() {
        let s = random_state(4, 0.8, 3);
        let p = partition(&s, s.context()).unwrap();
        assert_eq!(&p.w_oo, s.w());
        assert!(p.hidden.is_empty());
        assert_eq!(p.w_hh.shape(), (0, 0));
        assert_eq!(p.w_oh.shape(), (4, 0));
    }

    #[test]
    fn two_node_partition() {
        let s = random_state(2, 0.8, 4);
        let p = partition(&s, &ctx(&[0])).unwrap();
        assert_eq!(p.w_oo[(0, 0)], 0.0);
        assert_eq!(p.w_oh[(0, 0)], s.w()[(0, 1)]);
        assert_eq!(p.w_ho[(0, 0)], s.w()[(1, 0)]);
        assert_eq!(p.w_hh[(0, 0)], 0.0);
        assert_eq!(p.m_oh, p.m_ho.transpose());
    }

    #[test]
    fn partition_rejects_foreign_variables() {
        let s = random_state(3, 0.5, 1);
        assert!(matches!(partition(&s, &ctx(&[0, 7])), Err(Error::InvalidContext(_))));
    }

    #[test]
    fn blocks_reassemble_to_original() {
        let s = random_state(6, 0.9, 11);
        let observed = ctx(&[0, 2, 3, 5]);
        let p = partition(&s, &observed).unwrap();
        let obs: Vec<usize> = observed.ids().to_vec();
        let hid = p.hidden.clone();
        let mut rebuilt = Mat::zeros(6, 6);
        scatter_add(&mut rebuilt, &obs, &obs, &p.w_oo);
        scatter_add(&mut rebuilt, &obs, &hid, &p.w_oh);
        scatter_add(&mut rebuilt, &hid, &obs, &p.w_ho);
        scatter_add(&mut rebuilt, &hid, &hid, &p.w_hh);
        assert_eq!(&rebuilt, s.w());
    }

    #[test]
    fn absorption_with_zero_hidden_block_is_w_oh() {
        let w = Mat::from_row_slice(3, 3, &[0.0, 0.3, 0.2, 0.1, 0.0, 0.0, 0.4, 0.0, 0.0]);
        let s = state(w, Mat::identity(3, 3));
        let p = partition(&s, &ctx(&[0])).unwrap();
        let a = absorption(&p, DEFAULT_EPS).unwrap();
        assert_eq!(a.a, p.w_oh);
    }

    #[test]
    fn scalar_geometric_absorption() {
        let p = BlockPartition {
            observed: ctx(&[0]),
            hidden: alloc::vec![1],
            w_oo: Mat::zeros(1, 1),
            w_oh: Mat::from_element(1, 1, 0.3),
            w_ho: Mat::zeros(1, 1),
            w_hh: Mat::from_element(1, 1, 0.5),
            m_oo: Mat::identity(1, 1),
            m_oh: Mat::zeros(1, 1),
            m_ho: Mat::zeros(1, 1),
            m_hh: Mat::identity(1, 1),
        };
        let a = absorption(&p, DEFAULT_EPS).unwrap();
        assert!((a.a[(0, 0)] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn divergent_hidden_block_is_rejected() {
        let w_hh = Mat::from_row_slice(2, 2, &[0.0, 1.1, 1.1, 0.0]);
        assert!(matches!(check_spectral(&w_hh), Err(Error::NonConvergentHiddenBlock { .. })));
        // Frobenius norm above one but spectral radius zero: accepted.
        let nil = Mat::from_row_slice(2, 2, &[0.0, 3.0, 0.0, 0.0]);
        assert!(check_spectral(&nil).is_ok());
    }

    #[test]
    fn absorption_matches_truncated_neumann_series() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (o, h) = (3, 4);
            let w_hh = Mat::from_fn(h, h, |_, _| rng.random_range(-1.0..1.0));
            let w_hh = &w_hh * (0.8 / frobenius_norm(&w_hh));
            let w_oh = Mat::from_fn(o, h, |_, _| rng.random_range(-1.0..1.0));
            let p = BlockPartition {
                observed: Context::range(o).unwrap(),
                hidden: (o..o + h).collect(),
                w_oo: Mat::zeros(o, o),
                w_oh: w_oh.clone(),
                w_ho: Mat::zeros(h, o),
                w_hh: w_hh.clone(),
                m_oo: Mat::identity(o, o),
                m_oh: Mat::zeros(o, h),
                m_ho: Mat::zeros(h, o),
                m_hh: Mat::identity(h, h),
            };
            let a = absorption(&p, DEFAULT_EPS).unwrap().a;
            let mut series = Mat::zeros(o, h);
            let mut power = Mat::identity(h, h);
            for _ in 0..=60 {
                series += &w_oh * &power;
                power = &power * &w_hh;
            }
            assert!(frobenius_norm(&(&a - &series)) < 1e-10);
        }
    }

    #[test]
    fn projecting_onto_full_context_is_identity() {
        let s = random_state(5, 0.9, 8);
        let p = project(&s, s.context(), DEFAULT_EPS).unwrap();
        assert_eq!(p, s);
    }

    #[test]
    fn chain_marginalization_multiplies_weights() {
        let w = Mat::from_row_slice(3, 3, &[0.0, 0.4, 0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0]);
        let s = state(w, Mat::identity(3, 3));
        let p = project(&s, &ctx(&[0, 2]), DEFAULT_EPS).unwrap();
        // all-paths enumeration: the only path 0 -> 2 runs through hidden 1
        assert!((p.w()[(0, 1)] - 0.4 * 0.5).abs() < 1e-15);
        assert_eq!(p.w()[(1, 0)], 0.0);
    }

    #[test]
    fn no_outflow_to_hidden_keeps_identity_covariance() {
        // W_OH = 0 so A = 0
        let w = Mat::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.7, 0.0, 0.0, 0.2, 0.3, 0.0]);
        let s = state(w, Mat::identity(3, 3));
        let p = project(&s, &ctx(&[0, 1]), DEFAULT_EPS).unwrap();
        assert_eq!(p.covariance(), Mat::identity(2, 2));
    }

    #[test]
    fn projected_covariance_is_symmetric() {
        let s = random_state(7, 0.9, 21);
        let proj = Projection::compute(s.w(), &s.covariance(), &[0, 2, 4, 5], DEFAULT_EPS).unwrap();
        assert!(crate::linalg::max_abs_diff(&proj.m, &proj.m.transpose()) <= 1e-12);
    }

    #[test]
    fn tangent_matches_finite_difference() {
        let s = random_state(6, 0.8, 2);
        let m = s.covariance();
        let obs = [1usize, 3, 4];
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let dw = Mat::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
        let base = Projection::compute(s.w(), &m, &obs, DEFAULT_EPS).unwrap();
        let h = 1e-6;
        let plus = Projection::compute(&(s.w() + &dw * h), &m, &obs, DEFAULT_EPS).unwrap();
        let minus = Projection::compute(&(s.w() - &dw * h), &m, &obs, DEFAULT_EPS).unwrap();
        let fd = (plus.w - minus.w) / (2.0 * h);
        assert!(crate::linalg::max_abs_diff(&fd, &base.tangent_w(&dw)) < 1e-8);
    }

    #[test]
    fn backward_is_adjoint_of_tangent() {
        let s = random_state(6, 0.8, 9);
        let proj = Projection::compute(s.w(), &s.covariance(), &[0, 2, 5], DEFAULT_EPS).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dw = Mat::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
        let g = Mat::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let lhs = proj.tangent_w(&dw).component_mul(&g).sum();
        let (gw, _) = proj.backward(&g, &Mat::zeros(3, 3));
        let rhs = dw.component_mul(&gw).sum();
        assert!((lhs - rhs).abs() < 1e-12);
        // and for the covariance map
        let dm = Mat::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
        let dm = &dm + dm.transpose();
        let gm = &g + g.transpose();
        let lhs = proj.apply_m(&dm).component_mul(&gm).sum();
        let rhs = dm.component_mul(&proj.adjoint_m(&gm)).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
