//! Coherence objective over a family of local sections and its gradient.
//!
//! `total = λ_sem·semantic + λ_d·descent + λ_a·acyclicity + λ_s·spectral`,
//! with acyclicity and the spectral penalty summed over every section's `W`.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::causal_model::CausalState;
use crate::error::{Error, Result};
use crate::latent_projection::{Projection, DEFAULT_EPS};
use crate::linalg::{expm, frobenius_norm, frobenius_sq, Mat};
use crate::sheaf::ContextCover;

/// Edge magnitude at which the semantic squash saturates.
pub const W_SAT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_d: f64,
    pub lambda_a: f64,
    pub lambda_s: f64,
    pub lambda_sem: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_d: 1.0, lambda_a: 1.0, lambda_s: 0.1, lambda_sem: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_d", self.lambda_d),
            ("lambda_a", self.lambda_a),
            ("lambda_s", self.lambda_s),
            ("lambda_sem", self.lambda_sem),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Prior on the edge `i → j`: `belief` is the probability that it exists.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeBelief {
    pub i: usize,
    pub j: usize,
    pub belief: f64,
    pub confidence: f64,
}

impl EdgeBelief {
    pub fn new(i: usize, j: usize, belief: f64, confidence: f64) -> Result<Self> {
        if i == j {
            return Err(Error::InvalidConfig(format!("belief on self-loop ({i}, {i})")));
        }
        if !(0.0..=1.0).contains(&belief) || !(0.0..=1.0).contains(&confidence) {
            return Err(Error::InvalidConfig(format!(
                "belief {belief} and confidence {confidence} must lie in [0, 1]"
            )));
        }
        Ok(EdgeBelief { i, j, belief, confidence })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub semantic: f64,
    pub descent: f64,
    pub acyclicity: f64,
    pub spectral: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn compose(semantic: f64, descent: f64, acyclicity: f64, spectral: f64, w: &LossWeights) -> Self {
        let total = w.lambda_sem * semantic + w.lambda_d * descent + w.lambda_a * acyclicity + w.lambda_s * spectral;
        LossBreakdown { semantic, descent, acyclicity, spectral, total }
    }

    pub fn is_finite(&self) -> bool {
        [self.semantic, self.descent, self.acyclicity, self.spectral, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Gradient with respect to one section's free parameters. Entries that are
/// not free (the diagonal of `W`, the strict upper triangle of `L`) are 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SectionGradient {
    pub w: Mat,
    pub l: Mat,
}

impl SectionGradient {
    fn zeros(n: usize) -> Self {
        SectionGradient { w: Mat::zeros(n, n), l: Mat::zeros(n, n) }
    }

    pub fn max_abs(&self) -> f64 {
        self.w.iter().chain(self.l.iter()).fold(0.0, |m, v| m.max(libm::fabs(*v)))
    }
}

/// NOTEARS acyclicity `tr(exp(W∘W)) − n`.
pub fn acyclicity(w: &Mat) -> f64 {
    let e = expm(&w.component_mul(w));
    (e.trace() - w.nrows() as f64).max(0.0)
}

/// `∂h/∂W = exp(W∘W)ᵀ ∘ 2W`.
pub fn acyclicity_grad(w: &Mat) -> Mat {
    expm(&w.component_mul(w)).transpose().component_mul(w) * 2.0
}

/// `max(0, ‖W‖_F − (1 − δ))²`.
pub fn spectral_penalty(w: &Mat, delta: f64) -> f64 {
    let excess = frobenius_norm(w) - (1.0 - delta);
    if excess > 0.0 { excess * excess } else { 0.0 }
}

pub fn spectral_penalty_grad(w: &Mat, delta: f64) -> Mat {
    let norm = frobenius_norm(w);
    let excess = norm - (1.0 - delta);
    if excess > 0.0 { w * (2.0 * excess / norm) } else { Mat::zeros(w.nrows(), w.ncols()) }
}

fn squash(x: f64) -> f64 {
    (x / W_SAT).min(1.0)
}

fn check_sections(sections: &[CausalState], cover: &ContextCover) -> Result<()> {
    if sections.len() != cover.parts().len() {
        return Err(Error::InvalidContext(format!(
            "{} sections for a cover of {} parts",
            sections.len(),
            cover.parts().len()
        )));
    }
    for (s, p) in sections.iter().zip(cover.parts()) {
        if s.context() != p {
            return Err(Error::InvalidContext("section context differs from its cover part".into()));
        }
    }
    Ok(())
}

/// Frobenius descent loss: for every pair of parts with a nonempty overlap,
/// the squared difference of both sections projected onto the overlap, on
/// `W` and on `M`.
pub fn descent_loss(sections: &[CausalState], cover: &ContextCover) -> Result<f64> {
    check_sections(sections, cover)?;
    let covs: Vec<Mat> = sections.iter().map(|s| s.covariance()).collect();
    let mut total = 0.0;
    for (a, b, v) in cover.intersections() {
        let pa = Projection::compute(sections[*a].w(), &covs[*a], &sections[*a].context().positions_of(v)?, DEFAULT_EPS)?;
        let pb = Projection::compute(sections[*b].w(), &covs[*b], &sections[*b].context().positions_of(v)?, DEFAULT_EPS)?;
        total += frobenius_sq(&(&pa.w - &pb.w)) + frobenius_sq(&(&pa.m - &pb.m));
    }
    Ok(total)
}

/// `Σ_beliefs confidence·(squash(|w_ij|) − belief)²`, counted once for every
/// section whose context holds both endpoints.
pub fn semantic_energy(sections: &[CausalState], beliefs: &[EdgeBelief]) -> Result<f64> {
    let mut total = 0.0;
    for b in beliefs {
        let mut found = false;
        for s in sections {
            if let Some(w) = s.weight(b.i, b.j) {
                found = true;
                let d = squash(libm::fabs(w)) - b.belief;
                total += b.confidence * d * d;
            }
        }
        if !found {
            return Err(Error::DanglingBelief { i: b.i, j: b.j });
        }
    }
    Ok(total)
}

pub fn total_loss(
    sections: &[CausalState],
    cover: &ContextCover,
    beliefs: &[EdgeBelief],
    weights: &LossWeights,
    delta: f64,
) -> Result<LossBreakdown> {
    let semantic = semantic_energy(sections, beliefs)?;
    let descent = descent_loss(sections, cover)?;
    let acyc: f64 = sections.iter().map(|s| acyclicity(s.w())).sum();
    let spectral: f64 = sections.iter().map(|s| spectral_penalty(s.w(), delta)).sum();
    Ok(LossBreakdown::compose(semantic, descent, acyc, spectral, weights))
}

pub fn gradient(
    sections: &[CausalState],
    cover: &ContextCover,
    beliefs: &[EdgeBelief],
    weights: &LossWeights,
    delta: f64,
) -> Result<Vec<SectionGradient>> {
    loss_and_gradient(sections, cover, beliefs, weights, delta).map(|(_, g)| g)
}

/// Loss breakdown and exact gradient in one pass. The descent gradient goes
/// through the adjoint of each projection; the covariance gradient `Ḡ` is
/// pulled back to the factor as `(Ḡ + Ḡᵀ)·L`.
pub fn loss_and_gradient(
    sections: &[CausalState],
    cover: &ContextCover,
    beliefs: &[EdgeBelief],
    weights: &LossWeights,
    delta: f64,
) -> Result<(LossBreakdown, Vec<SectionGradient>)> {
    check_sections(sections, cover)?;
    let mut grads: Vec<SectionGradient> = sections.iter().map(|s| SectionGradient::zeros(s.n())).collect();
    let mut grad_m: Vec<Mat> = sections.iter().map(|s| Mat::zeros(s.n(), s.n())).collect();

    // semantic
    let mut semantic = 0.0;
    for b in beliefs {
        let mut found = false;
        for (k, s) in sections.iter().enumerate() {
            let (Some(pi), Some(pj)) = (s.context().position(b.i), s.context().position(b.j)) else {
                continue;
            };
            found = true;
            let w = s.w()[(pi, pj)];
            let mag = libm::fabs(w);
            let d = squash(mag) - b.belief;
            semantic += b.confidence * d * d;
            if mag < W_SAT && w != 0.0 {
                let sign = if w > 0.0 { 1.0 } else { -1.0 };
                grads[k].w[(pi, pj)] += weights.lambda_sem * 2.0 * b.confidence * d * sign / W_SAT;
            }
        }
        if !found {
            return Err(Error::DanglingBelief { i: b.i, j: b.j });
        }
    }

    // descent
    let covs: Vec<Mat> = sections.iter().map(|s| s.covariance()).collect();
    let mut descent = 0.0;
    for (a, b, v) in cover.intersections() {
        let pa = Projection::compute(sections[*a].w(), &covs[*a], &sections[*a].context().positions_of(v)?, DEFAULT_EPS)?;
        let pb = Projection::compute(sections[*b].w(), &covs[*b], &sections[*b].context().positions_of(v)?, DEFAULT_EPS)?;
        let dw = &pa.w - &pb.w;
        let dm = &pa.m - &pb.m;
        descent += frobenius_sq(&dw) + frobenius_sq(&dm);
        if weights.lambda_d != 0.0 {
            let scale = 2.0 * weights.lambda_d;
            let (gwa, gma) = pa.backward(&(&dw * scale), &(&dm * scale));
            let (gwb, gmb) = pb.backward(&(&dw * -scale), &(&dm * -scale));
            grads[*a].w += gwa;
            grad_m[*a] += gma;
            grads[*b].w += gwb;
            grad_m[*b] += gmb;
        }
    }

    // acyclicity and spectral
    let mut acyc = 0.0;
    let mut spectral = 0.0;
    for (k, s) in sections.iter().enumerate() {
        acyc += acyclicity(s.w());
        spectral += spectral_penalty(s.w(), delta);
        if weights.lambda_a != 0.0 {
            grads[k].w += acyclicity_grad(s.w()) * weights.lambda_a;
        }
        if weights.lambda_s != 0.0 {
            grads[k].w += spectral_penalty_grad(s.w(), delta) * weights.lambda_s;
        }
    }

    for (k, s) in sections.iter().enumerate() {
        let g = &mut grads[k];
        let n = s.n();
        for i in 0..n {
            g.w[(i, i)] = 0.0;
        }
        let gm = &grad_m[k];
        let mut gl = (gm + gm.transpose()) * s.l();
        for i in 0..n {
            for j in (i + 1)..n {
                gl[(i, j)] = 0.0;
            }
        }
        g.l = gl;
    }

    let breakdown = LossBreakdown::compose(semantic, descent, acyc, spectral, weights);
    if !breakdown.is_finite() || grads.iter().any(|g| !g.max_abs().is_finite()) {
        return Err(Error::NonFiniteGradient { step: 0 });
    }
    Ok((breakdown, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::causal_model::Context;
    use crate::latent_projection::project;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ctx(ids: &[usize]) -> Context {
        Context::new(ids.to_vec()).unwrap()
    }

    #[test]
    fn acyclicity_examples() {
        assert_eq!(acyclicity(&Mat::zeros(3, 3)), 0.0);
        let chain = Mat::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(acyclicity(&chain).abs() < 1e-15);
        let cycle = Mat::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!((acyclicity(&cycle) - (2.0 * libm::cosh(1.0) - 2.0)).abs() < 1e-12);
    }

    #[test]
    fn spectral_examples() {
        let mut w = Mat::zeros(2, 2);
        w[(0, 1)] = 0.5;
        assert_eq!(spectral_penalty(&w, 0.1), 0.0);
        w[(0, 1)] = 1.0;
        assert!((spectral_penalty(&w, 0.1) - 0.01).abs() < 1e-15);
        w[(0, 1)] = 0.9;
        assert_eq!(spectral_penalty(&w, 0.1), 0.0);
    }

    #[test]
    fn semantic_examples() {
        let mut w = Mat::zeros(2, 2);
        w[(0, 1)] = 0.5;
        let s = CausalState::from_parts(ctx(&[3, 7]), w.clone(), Mat::identity(2, 2)).unwrap();
        assert_eq!(semantic_energy(core::slice::from_ref(&s), &[]).unwrap(), 0.0);
        let b = EdgeBelief::new(3, 7, 0.0, 1.0).unwrap();
        assert!((semantic_energy(core::slice::from_ref(&s), &[b]).unwrap() - 0.25).abs() < 1e-15);
        w[(0, 1)] = -1.4;
        let s2 = CausalState::from_parts(ctx(&[3, 7]), w, Mat::identity(2, 2)).unwrap();
        let b = EdgeBelief::new(3, 7, 1.0, 1.0).unwrap();
        assert_eq!(semantic_energy(&[s2], &[b]).unwrap(), 0.0);
        let stray = EdgeBelief::new(3, 9, 1.0, 1.0).unwrap();
        assert_eq!(semantic_energy(&[s], &[stray]), Err(Error::DanglingBelief { i: 3, j: 9 }));
    }

    #[test]
    fn belief_validation() {
        assert!(EdgeBelief::new(1, 1, 0.5, 0.5).is_err());
        assert!(EdgeBelief::new(0, 1, 1.5, 0.5).is_err());
        assert!(EdgeBelief::new(0, 1, 0.5, -0.1).is_err());
    }

    #[test]
    fn descent_of_identical_contexts_is_squared_difference() {
        let c = ctx(&[0, 1, 2]);
        let cover = ContextCover::new(c.clone(), alloc::vec![c.clone(), c.clone()]).unwrap();
        let a = CausalState::from_parts(c.clone(), Mat::zeros(3, 3), Mat::identity(3, 3)).unwrap();
        let mut dw = Mat::zeros(3, 3);
        dw[(0, 2)] = 0.3;
        dw[(1, 0)] = 0.4;
        let b = CausalState::from_parts(c, dw, Mat::identity(3, 3)).unwrap();
        assert!((descent_loss(&[a, b], &cover).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn descent_of_restrictions_is_zero() {
        let g = CausalState::random(Context::range(9).unwrap(), 0.3, 4).unwrap();
        let cover = ContextCover::new(
            g.context().clone(),
            alloc::vec![ctx(&[0, 1, 2, 3, 4, 5]), ctx(&[3, 4, 5, 6, 7]), ctx(&[0, 5, 6, 7, 8])],
        )
        .unwrap();
        let secs: Vec<CausalState> = cover.parts().iter().map(|p| project(&g, p, DEFAULT_EPS).unwrap()).collect();
        assert!(descent_loss(&secs, &cover).unwrap() < 1e-24);
    }

    #[test]
    fn composition_is_exact() {
        let g = CausalState::random(Context::range(5).unwrap(), 0.6, 1).unwrap();
        let cover = ContextCover::single(g.context().clone());
        let weights = LossWeights { lambda_d: 0.7, lambda_a: 1.3, lambda_s: 0.1, lambda_sem: 1.0 };
        let beliefs = [EdgeBelief::new(0, 3, 0.9, 0.5).unwrap()];
        let b = total_loss(core::slice::from_ref(&g), &cover, &beliefs, &weights, 0.1).unwrap();
        let manual = b.semantic + 0.7 * b.descent + 1.3 * b.acyclicity + 0.1 * b.spectral;
        assert_eq!(b.total, manual);
        let (b2, _) = loss_and_gradient(&[g], &cover, &beliefs, &weights, 0.1).unwrap();
        assert_eq!(b, b2);
    }

    #[test]
    fn gradient_vanishes_at_the_origin() {
        let c = Context::range(4).unwrap();
        let s = CausalState::from_parts(c.clone(), Mat::zeros(4, 4), Mat::identity(4, 4)).unwrap();
        let g = gradient(&[s], &ContextCover::single(c), &[], &LossWeights::default(), 0.1).unwrap();
        assert_eq!(g[0].max_abs(), 0.0);
    }

    #[test]
    fn acyclicity_gradient_matches_differences() {
        let w = Mat::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let g = acyclicity_grad(&w);
        let h = 1e-5;
        for i in 0..2 {
            for j in 0..2 {
                let mut p = w.clone();
                p[(i, j)] += h;
                let mut m = w.clone();
                m[(i, j)] -= h;
                let fd = (acyclicity(&p) - acyclicity(&m)) / (2.0 * h);
                assert!((fd - g[(i, j)]).abs() < 1e-8, "({i},{j}) {fd} vs {}", g[(i, j)]);
            }
        }
    }

    #[test]
    fn full_gradient_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ground = Context::range(8).unwrap();
        let cover = ContextCover::new(
            ground,
            alloc::vec![ctx(&[0, 1, 2, 3, 4]), ctx(&[2, 3, 4, 5, 6]), ctx(&[0, 4, 5, 6, 7])],
        )
        .unwrap();
        let sections: Vec<CausalState> = cover
            .parts()
            .iter()
            .map(|p| CausalState::random(p.clone(), 0.35, rng.random()).unwrap())
            .collect();
        let beliefs = [EdgeBelief::new(2, 3, 0.95, 0.9).unwrap(), EdgeBelief::new(5, 4, 0.05, 0.6).unwrap()];
        let weights = LossWeights::default();
        let grads = gradient(&sections, &cover, &beliefs, &weights, 0.1).unwrap();
        let h = 1e-5;
        let eval = |secs: &[CausalState]| total_loss(secs, &cover, &beliefs, &weights, 0.1).unwrap().total;
        let mut worst: f64 = 0.0;
        for k in 0..sections.len() {
            let n = sections[k].n();
            for i in 0..n {
                for j in 0..n {
                    for on_l in [false, true] {
                        if (!on_l && i == j) || (on_l && j > i) {
                            continue;
                        }
                        let perturb = |d: f64| {
                            let mut secs = sections.clone();
                            let (c, mut w, mut l) = secs[k].clone().into_parts();
                            if on_l { l[(i, j)] += d } else { w[(i, j)] += d }
                            secs[k] = CausalState::from_parts(c, w, l).unwrap();
                            eval(&secs)
                        };
                        let fd = (perturb(h) - perturb(-h)) / (2.0 * h);
                        let an = if on_l { grads[k].l[(i, j)] } else { grads[k].w[(i, j)] };
                        worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-3));
                    }
                }
            }
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }
}
