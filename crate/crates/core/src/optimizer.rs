//! Natural-gradient fitting of a family of local sections with a diagonal,
//! Tikhonov-regularized Fisher estimate.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::causal_model::CausalState;
use crate::error::{Error, Result};
use crate::latent_projection::DEFAULT_EPS;
use crate::linalg::Mat;
use crate::objective::{loss_and_gradient, total_loss, EdgeBelief, LossBreakdown, LossWeights, SectionGradient};
use crate::sheaf::ContextCover;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub max_steps: usize,
    pub fisher_tikhonov: f64,
    pub fisher_floor: f64,
    pub use_natural_gradient: bool,
    pub fisher: FisherEstimator,
    /// Decay of an exponential moving average over squared gradients
    /// (squared-gradient estimator only); `None` uses the instantaneous
    /// squared gradient.
    pub fisher_ema: Option<f64>,
    pub weights: LossWeights,
    pub delta: f64,
    /// Steps between belief refreshes.
    pub query_interval: usize,
    /// Early stop once the total loss falls below this.
    pub stop_loss: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 0.01,
            max_steps: 1500,
            fisher_tikhonov: 1e-4,
            fisher_floor: 0.01,
            use_natural_gradient: true,
            fisher: FisherEstimator::Model,
            fisher_ema: None,
            weights: LossWeights::default(),
            delta: 0.1,
            query_interval: 50,
            stop_loss: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must be > 0, got {v}")))
            }
        };
        positive("learning_rate", self.learning_rate)?;
        positive("fisher_tikhonov", self.fisher_tikhonov)?;
        positive("fisher_floor", self.fisher_floor)?;
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidConfig(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if self.query_interval == 0 {
            return Err(Error::InvalidConfig("query_interval must be >= 1".into()));
        }
        if let Some(d) = self.fisher_ema {
            if !(0.0..1.0).contains(&d) {
                return Err(Error::InvalidConfig(format!("fisher_ema decay must lie in [0, 1), got {d}")));
            }
        }
        self.weights.validate()
    }
}

/// Source of the curvature in the natural step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FisherEstimator {
    /// Expected squared score of the Gaussian model each section defines.
    Model,
    /// Squared gradient of the total loss.
    SquaredGradient,
}

/// One positive curvature estimate per parameter, laid out like the gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherDiagonal {
    pub sections: Vec<SectionGradient>,
}

impl FisherDiagonal {
    pub fn ones_like(grads: &[SectionGradient]) -> Self {
        let sections = grads
            .iter()
            .map(|g| SectionGradient {
                w: Mat::from_element(g.w.nrows(), g.w.ncols(), 1.0),
                l: Mat::from_element(g.l.nrows(), g.l.ncols(), 1.0),
            })
            .collect();
        FisherDiagonal { sections }
    }

    pub fn min_entry(&self) -> f64 {
        self.sections
            .iter()
            .flat_map(|s| s.w.iter().chain(s.l.iter()))
            .fold(f64::INFINITY, |m, v| m.min(*v))
    }
}

fn fisher_entry(sq: f64, config: &OptimizerConfig) -> f64 {
    (sq + config.fisher_tikhonov).max(config.fisher_floor)
}

/// `max(g² + λ_reg, floor)` per entry.
pub fn fisher_diag(grads: &[SectionGradient], config: &OptimizerConfig) -> FisherDiagonal {
    let sections = grads
        .iter()
        .map(|g| SectionGradient {
            w: g.w.map(|v| fisher_entry(v * v, config)),
            l: g.l.map(|v| fisher_entry(v * v, config)),
        })
        .collect();
    FisherDiagonal { sections }
}

/// Diagonal Fisher information of the Gaussian SEM `x = Wᵀx + ε`,
/// `ε ~ N(0, LLᵀ)`, for every section, regularized and floored like
/// [`fisher_diag`].
///
/// With `B = (I − Wᵀ)⁻¹` and `Σ = B M Bᵀ`, the score of `W_ij` has variance
/// `Σ_ii (M⁻¹)_jj + B_ij²`, and the score of `L_ab` has variance
/// `(L⁻¹)_ba² + (M⁻¹)_aa`.
pub fn model_fisher(sections: &[CausalState], config: &OptimizerConfig) -> FisherDiagonal {
    let sections = sections
        .iter()
        .map(|s| {
            let n = s.n();
            let eye = Mat::identity(n, n);
            let shift = &eye - s.w().transpose();
            let b = shift
                .clone()
                .try_inverse()
                .or_else(|| (shift + &eye * DEFAULT_EPS).try_inverse())
                .unwrap_or_else(|| eye.clone());
            let mut l = s.l().clone();
            for i in 0..n {
                if l[(i, i)] < DEFAULT_EPS {
                    l[(i, i)] = DEFAULT_EPS;
                }
            }
            let l_inv = l
                .solve_lower_triangular(&eye)
                .unwrap_or_else(|| eye.clone());
            let m_inv = l_inv.transpose() * &l_inv;
            let sigma = &b * s.covariance() * b.transpose();
            SectionGradient {
                w: Mat::from_fn(n, n, |i, j| {
                    fisher_entry(sigma[(i, i)] * m_inv[(j, j)] + b[(i, j)] * b[(i, j)], config)
                }),
                l: Mat::from_fn(n, n, |a, c| fisher_entry(l_inv[(c, a)] * l_inv[(c, a)] + m_inv[(a, a)], config)),
            }
        })
        .collect();
    FisherDiagonal { sections }
}

/// Running average of squared gradients behind the EMA Fisher variant.
#[derive(Debug, Clone, PartialEq)]
pub struct SquaredGradientAverage {
    decay: f64,
    avg: Option<Vec<SectionGradient>>,
}

impl SquaredGradientAverage {
    pub fn new(decay: f64) -> Self {
        SquaredGradientAverage { decay, avg: None }
    }

    pub fn update(&mut self, grads: &[SectionGradient], config: &OptimizerConfig) -> FisherDiagonal {
        let sq: Vec<SectionGradient> = grads
            .iter()
            .map(|g| SectionGradient { w: g.w.map(|v| v * v), l: g.l.map(|v| v * v) })
            .collect();
        let avg = match self.avg.take() {
            None => sq,
            Some(prev) => prev
                .into_iter()
                .zip(sq)
                .map(|(p, s)| SectionGradient {
                    w: p.w * self.decay + s.w * (1.0 - self.decay),
                    l: p.l * self.decay + s.l * (1.0 - self.decay),
                })
                .collect(),
        };
        let fisher = FisherDiagonal {
            sections: avg
                .iter()
                .map(|a| SectionGradient {
                    w: a.w.map(|v| fisher_entry(v, config)),
                    l: a.l.map(|v| fisher_entry(v, config)),
                })
                .collect(),
        };
        self.avg = Some(avg);
        fisher
    }
}

fn rebuild(state: &CausalState, w: Mat, l: Mat) -> CausalState {
    CausalState::from_parts(state.context().clone(), w, l).expect("finite step keeps shapes")
}

/// `θ − η·g/F` entrywise, then back onto the parameter manifold.
pub fn natural_step(
    sections: &[CausalState],
    grads: &[SectionGradient],
    fisher: &FisherDiagonal,
    eta: f64,
) -> Vec<CausalState> {
    sections
        .iter()
        .zip(grads)
        .zip(&fisher.sections)
        .map(|((s, g), f)| {
            let w = s.w() - g.w.component_div(&f.w) * eta;
            let l = s.l() - g.l.component_div(&f.l) * eta;
            rebuild(s, w, l)
        })
        .collect()
}

/// `θ − η·g`, then back onto the parameter manifold.
pub fn sgd_step(sections: &[CausalState], grads: &[SectionGradient], eta: f64) -> Vec<CausalState> {
    sections
        .iter()
        .zip(grads)
        .map(|(s, g)| {
            let w = s.w() - &g.w * eta;
            let l = s.l() - &g.l * eta;
            rebuild(s, w, l)
        })
        .collect()
}

/// Steps where the descent loss has stopped improving: relative improvement
/// over the last `window` steps below `rel_tol` while still above 1e-6.
pub fn detect_obstruction(steps: &[LossBreakdown], window: usize, rel_tol: f64) -> Vec<usize> {
    let window = window.max(2);
    (window..steps.len())
        .filter(|&t| {
            let before = steps[t - window].descent;
            let now = steps[t].descent;
            now > 1e-6 && (before - now) / before.max(1e-12) < rel_tol
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<LossBreakdown>,
    /// First step whose total loss fell below the stop threshold.
    pub converged_at: Option<usize>,
    pub obstructions: Vec<usize>,
}

/// Supplies edge beliefs to the fit loop; called every `query_interval` steps.
pub trait BeliefSource {
    /// New complete belief list, or `None` to keep the current one.
    fn refresh(&mut self, step: usize, sections: &[CausalState], cover: &ContextCover) -> Result<Option<Vec<EdgeBelief>>>;
}

/// No oracle: the belief list stays empty.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoBeliefs;

impl BeliefSource for NoBeliefs {
    fn refresh(&mut self, _: usize, _: &[CausalState], _: &ContextCover) -> Result<Option<Vec<EdgeBelief>>> {
        Ok(None)
    }
}

/// A fixed belief list installed on the first refresh.
#[derive(Debug, Clone, Default)]
pub struct FixedBeliefs(pub Vec<EdgeBelief>);

impl BeliefSource for FixedBeliefs {
    fn refresh(&mut self, step: usize, _: &[CausalState], _: &ContextCover) -> Result<Option<Vec<EdgeBelief>>> {
        Ok((step == 0).then(|| self.0.clone()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub sections: Vec<CausalState>,
    pub trajectory: Trajectory,
    /// Loss of the returned sections under the final beliefs.
    pub final_loss: LossBreakdown,
    pub beliefs: Vec<EdgeBelief>,
}

pub fn fit(
    initial: Vec<CausalState>,
    cover: &ContextCover,
    source: &mut dyn BeliefSource,
    config: &OptimizerConfig,
) -> Result<FitOutcome> {
    fit_observed(initial, cover, source, config, &mut |_, _| {})
}

/// [`fit`] with a callback after every logged step.
pub fn fit_observed(
    initial: Vec<CausalState>,
    cover: &ContextCover,
    source: &mut dyn BeliefSource,
    config: &OptimizerConfig,
    observer: &mut dyn FnMut(usize, &LossBreakdown),
) -> Result<FitOutcome> {
    config.validate()?;
    let mut sections = initial;
    let mut beliefs: Vec<EdgeBelief> = Vec::new();
    let mut trajectory = Trajectory::default();
    let mut ema = config.fisher_ema.map(SquaredGradientAverage::new);

    for step in 0..config.max_steps {
        if step % config.query_interval == 0 {
            if let Some(b) = source.refresh(step, &sections, cover)? {
                beliefs = b;
            }
        }
        let (loss, grads) = loss_and_gradient(&sections, cover, &beliefs, &config.weights, config.delta)
            .map_err(|e| match e {
                Error::NonFiniteGradient { .. } => Error::NonFiniteGradient { step },
                other => other,
            })?;
        trajectory.steps.push(loss);
        observer(step, &loss);
        if loss.total < config.stop_loss {
            trajectory.converged_at = Some(step);
            break;
        }
        sections = if config.use_natural_gradient {
            let fisher = match (config.fisher, ema.as_mut()) {
                (FisherEstimator::Model, _) => model_fisher(&sections, config),
                (FisherEstimator::SquaredGradient, Some(avg)) => avg.update(&grads, config),
                (FisherEstimator::SquaredGradient, None) => fisher_diag(&grads, config),
            };
            natural_step(&sections, &grads, &fisher, config.learning_rate)
        } else {
            sgd_step(&sections, &grads, config.learning_rate)
        };
    }

    let final_loss = total_loss(&sections, cover, &beliefs, &config.weights, config.delta)?;
    if !final_loss.is_finite() {
        return Err(Error::NonFiniteGradient { step: trajectory.steps.len() });
    }
    trajectory.obstructions = detect_obstruction(&trajectory.steps, 50, 1e-3);
    Ok(FitOutcome { sections, trajectory, final_loss, beliefs })
}
