//! Experiment configuration, per-seed runs and aggregation.
//!
//! File IO, the HTTP oracle and parallel fan-out live in the `holograph`
//! crate; this module holds the deterministic part of a run.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::causal_model::{BinaryGraph, CausalState, Context};
use crate::error::{Error, Result};
use crate::generators::{gen_er, gen_latent, gen_sf, GroundTruth};
use crate::linalg::Mat;
use crate::metrics::{f1, shd, sid};
use crate::objective::LossBreakdown;
use crate::optimizer::{fit_observed, BeliefSource, NoBeliefs, OptimizerConfig, Trajectory};
use crate::query::{ActiveQuerier, Budget, Oracle, OracleAnswer, QueryCandidate, SelectionStrategy, SimulatedOracle};
use crate::sheaf::{average_entries, ContextCover};
use crate::stats::MeanStd;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ablation {
    Full,
    /// Plain SGD instead of the natural gradient.
    A1,
    /// No descent loss.
    A2,
    /// No spectral penalty.
    A3,
    /// Random above-threshold queries instead of EFE ranking.
    A4,
    /// Weaker oracle: the fast model for LLM oracles, extra label noise for
    /// the simulator.
    A5,
    /// No oracle.
    A6,
}

impl Ablation {
    pub const ALL: [Ablation; 7] =
        [Ablation::Full, Ablation::A1, Ablation::A2, Ablation::A3, Ablation::A4, Ablation::A5, Ablation::A6];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::A1 => "a1",
            Ablation::A2 => "a2",
            Ablation::A3 => "a3",
            Ablation::A4 => "a4",
            Ablation::A5 => "a5",
            Ablation::A6 => "a6",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown ablation '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSpec {
    Er { n: usize, edge_prob: f64 },
    Sf { n: usize, avg_degree: f64 },
    Latent { n_obs: usize, n_latent: usize },
    /// 11-variable adjacency CSV supplied by the user.
    Sachs { path: String },
}

impl DatasetSpec {
    /// `er20`, `er50`, `sf50`, `latent-<obs>-<latent>`; `sachs` needs a path.
    pub fn preset(name: &str, sachs_path: Option<&str>) -> Result<Self> {
        let lower = name.to_ascii_lowercase();
        let spec = match lower.as_str() {
            "er20" => DatasetSpec::Er { n: 20, edge_prob: 0.2 },
            "er50" => DatasetSpec::Er { n: 50, edge_prob: 0.15 },
            "sf50" => DatasetSpec::Sf { n: 50, avg_degree: 2.0 },
            "sachs" => DatasetSpec::Sachs {
                path: sachs_path
                    .ok_or_else(|| Error::InvalidConfig("the sachs dataset needs an adjacency file".into()))?
                    .to_string(),
            },
            other => {
                let parts: Vec<&str> = other.split('-').collect();
                match parts.as_slice() {
                    ["latent", o, l] => DatasetSpec::Latent {
                        n_obs: o.parse().map_err(|_| Error::InvalidConfig(format!("bad dataset '{name}'")))?,
                        n_latent: l.parse().map_err(|_| Error::InvalidConfig(format!("bad dataset '{name}'")))?,
                    },
                    _ => return Err(Error::InvalidConfig(format!("unknown dataset '{name}'"))),
                }
            }
        };
        Ok(spec)
    }

    pub fn label(&self) -> String {
        match self {
            DatasetSpec::Er { n, edge_prob } => format!("er-{n}-p{edge_prob}"),
            DatasetSpec::Sf { n, avg_degree } => format!("sf-{n}-d{avg_degree}"),
            DatasetSpec::Latent { n_obs, n_latent } => format!("latent-{n_obs}-{n_latent}"),
            DatasetSpec::Sachs { .. } => "sachs".to_string(),
        }
    }

    pub fn n(&self) -> usize {
        match self {
            DatasetSpec::Er { n, .. } | DatasetSpec::Sf { n, .. } => *n,
            DatasetSpec::Latent { n_obs, .. } => *n_obs,
            DatasetSpec::Sachs { .. } => 11,
        }
    }

    /// Synthetic ground truth for `seed`; Sachs truth has to be loaded.
    pub fn generate(&self, seed: u64) -> Result<GroundTruth> {
        match self {
            DatasetSpec::Er { n, edge_prob } => gen_er(*n, *edge_prob, seed),
            DatasetSpec::Sf { n, avg_degree } => gen_sf(*n, *avg_degree, seed),
            DatasetSpec::Latent { n_obs, n_latent } => gen_latent(*n_obs, *n_latent, seed).map(|(t, _)| t),
            DatasetSpec::Sachs { .. } => {
                Err(Error::InvalidConfig("sachs ground truth is loaded from file, not generated".into()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmSpec {
    pub base_url: String,
    pub model: String,
    /// Model used under ablation A5.
    #[serde(default)]
    pub fast_model: Option<String>,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u64,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_api_key_env() -> String {
    "HOLOGRAPH_API_KEY".to_string()
}

fn default_temperature() -> f64 {
    0.1
}

fn default_max_tokens() -> u64 {
    4096
}

fn default_timeout() -> u64 {
    120
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OracleSpec {
    Simulated {
        #[serde(default)]
        noise_rate: f64,
    },
    Llm(LlmSpec),
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoverSpec {
    pub parts: usize,
    pub fraction: f64,
    pub min_overlap: usize,
}

impl Default for CoverSpec {
    fn default() -> Self {
        CoverSpec { parts: 3, fraction: 0.6, min_overlap: 2 }
    }
}

fn default_seeds() -> Vec<u64> {
    (42..47).collect()
}

fn default_ablation() -> Ablation {
    Ablation::Full
}

fn default_oracle() -> OracleSpec {
    OracleSpec::Simulated { noise_rate: 0.0 }
}

fn default_queries_per_round() -> usize {
    4
}

fn default_init_scale() -> f64 {
    0.3
}

fn default_threshold() -> f64 {
    0.3
}

fn default_a5_noise() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_ablation")]
    pub ablation: Ablation,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_oracle")]
    pub oracle: OracleSpec,
    #[serde(default)]
    pub cover: CoverSpec,
    #[serde(default)]
    pub budget: Budget,
    #[serde(default = "default_queries_per_round")]
    pub queries_per_round: usize,
    /// Half-width of the uniform initialization of every section's `W`.
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    /// Edge threshold for the discretized estimate.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Label noise added to the simulator under A5.
    #[serde(default = "default_a5_noise")]
    pub a5_extra_noise: f64,
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetSpec, ablation: Ablation) -> Self {
        ExperimentConfig {
            dataset,
            seeds: default_seeds(),
            ablation,
            optimizer: OptimizerConfig::default(),
            oracle: default_oracle(),
            cover: CoverSpec::default(),
            budget: Budget::default(),
            queries_per_round: default_queries_per_round(),
            init_scale: default_init_scale(),
            threshold: default_threshold(),
            a5_extra_noise: default_a5_noise(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds must be nonempty".into()));
        }
        if self.dataset.n() == 0 {
            return Err(Error::InvalidConfig("dataset needs at least one variable".into()));
        }
        match self.dataset {
            DatasetSpec::Er { edge_prob, .. } if !(edge_prob > 0.0 && edge_prob < 1.0) => {
                return Err(Error::InvalidConfig(format!("edge_prob must lie in (0, 1), got {edge_prob}")));
            }
            DatasetSpec::Sf { avg_degree, .. } if !(avg_degree > 0.0 && avg_degree.is_finite()) => {
                return Err(Error::InvalidConfig(format!("avg_degree must be positive, got {avg_degree}")));
            }
            DatasetSpec::Latent { n_obs, n_latent } if n_obs < 2 || n_latent == 0 => {
                return Err(Error::InvalidConfig("latent datasets need >= 2 observed and >= 1 latent".into()));
            }
            _ => {}
        }
        if self.cover.parts == 0 || !(self.cover.fraction > 0.0 && self.cover.fraction <= 1.0) {
            return Err(Error::InvalidConfig("cover needs >= 1 part and a fraction in (0, 1]".into()));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::InvalidConfig("threshold must be > 0".into()));
        }
        if let OracleSpec::Simulated { noise_rate } = self.oracle {
            if !(0.0..0.5).contains(&noise_rate) {
                return Err(Error::InvalidConfig(format!("noise_rate must lie in [0, 0.5), got {noise_rate}")));
            }
        }
        self.effective_optimizer().validate()
    }

    /// Optimizer settings after applying the ablation.
    pub fn effective_optimizer(&self) -> OptimizerConfig {
        let mut o = self.optimizer;
        match self.ablation {
            Ablation::A1 => o.use_natural_gradient = false,
            Ablation::A2 => o.weights.lambda_d = 0.0,
            Ablation::A3 => o.weights.lambda_s = 0.0,
            _ => {}
        }
        o
    }

    pub fn uses_oracle(&self) -> bool {
        self.ablation != Ablation::A6 && !matches!(self.oracle, OracleSpec::None)
    }

    pub fn strategy(&self, seed: u64) -> SelectionStrategy {
        if self.ablation == Ablation::A4 {
            SelectionStrategy::Random { seed: seed ^ 0xa4a4_a4a4 }
        } else {
            SelectionStrategy::Efe
        }
    }

    /// Simulator for a seed, or `None` when this run has no simulated oracle.
    pub fn simulated_oracle(&self, seed: u64, truth: &GroundTruth) -> Result<Option<SimulatedOracle>> {
        let OracleSpec::Simulated { noise_rate } = self.oracle else { return Ok(None) };
        if !self.uses_oracle() {
            return Ok(None);
        }
        let noise = if self.ablation == Ablation::A5 { (noise_rate + self.a5_extra_noise).min(0.45) } else { noise_rate };
        SimulatedOracle::new(truth.graph.clone(), &truth.latent_pairs, noise, seed).map(Some)
    }

    /// Model name an LLM oracle should use under this ablation.
    pub fn llm_model(&self) -> Option<&str> {
        match &self.oracle {
            OracleSpec::Llm(spec) => Some(match (&spec.fast_model, self.ablation) {
                (Some(fast), Ablation::A5) => fast.as_str(),
                _ => spec.model.as_str(),
            }),
            _ => None,
        }
    }
}

/// Outcome of one seed. Runtime is measured by the caller and kept apart
/// so that records stay reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub completed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub shd: Option<usize>,
    pub f1: Option<f64>,
    /// `None` when the estimate is cyclic.
    pub sid: Option<usize>,
    pub true_edges: usize,
    pub estimated_edges: Option<usize>,
    pub final_loss: Option<LossBreakdown>,
    pub steps: usize,
    pub converged_at: Option<usize>,
    pub obstruction_steps: usize,
    pub queries_used: u64,
    pub tokens_used: u64,
}

impl SeedResult {
    pub fn failed<E: core::fmt::Display + ?Sized>(seed: u64, true_edges: usize, err: &E) -> Self {
        SeedResult {
            seed,
            completed: false,
            error: Some(err.to_string()),
            shd: None,
            f1: None,
            sid: None,
            true_edges,
            estimated_edges: None,
            final_loss: None,
            steps: 0,
            converged_at: None,
            obstruction_steps: 0,
            queries_used: 0,
            tokens_used: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub completed_seeds: usize,
    pub shd: Option<MeanStd>,
    pub f1: Option<MeanStd>,
    pub sid: Option<MeanStd>,
    pub final_total_loss: Option<MeanStd>,
}

fn mean_std<I: Iterator<Item = f64>>(values: I) -> Option<MeanStd> {
    let v: Vec<f64> = values.collect();
    (!v.is_empty()).then(|| MeanStd::of(&v))
}

/// Mean ± population std over completed seeds.
pub fn aggregate(seeds: &[SeedResult]) -> Aggregate {
    let done: Vec<&SeedResult> = seeds.iter().filter(|s| s.completed).collect();
    Aggregate {
        completed_seeds: done.len(),
        shd: mean_std(done.iter().filter_map(|s| s.shd.map(|v| v as f64))),
        f1: mean_std(done.iter().filter_map(|s| s.f1)),
        sid: mean_std(done.iter().filter_map(|s| s.sid.map(|v| v as f64))),
        final_total_loss: mean_std(done.iter().filter_map(|s| s.final_loss.map(|l| l.total))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub label: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedResult>,
    pub aggregate: Aggregate,
}

impl ExperimentRecord {
    pub fn new(config: ExperimentConfig, seeds: Vec<SeedResult>) -> Self {
        let label = format!("{}-{}", config.dataset.label(), config.ablation.name());
        let aggregate = aggregate(&seeds);
        ExperimentRecord { label, config, seeds, aggregate }
    }

    pub fn all_completed(&self) -> bool {
        self.seeds.iter().all(|s| s.completed)
    }
}

/// Everything a seed produced.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub result: SeedResult,
    pub trajectory: Trajectory,
    pub sections: Vec<CausalState>,
    pub estimate: BinaryGraph,
    pub answers: Vec<(QueryCandidate, OracleAnswer)>,
}

/// Global weight estimate: entrywise mean of the sections' `W` over the
/// parts observing each pair.
pub fn global_weights(sections: &[CausalState], cover: &ContextCover) -> Result<Mat> {
    let ground = cover.ground();
    let positions: Vec<Vec<usize>> = sections.iter().map(|s| ground.positions_of(s.context())).collect::<Result<_>>()?;
    let blocks: Vec<&Mat> = sections.iter().map(|s| s.w()).collect();
    Ok(average_entries(ground.len(), &positions, &blocks))
}

/// Cover and initial sections for a seed.
pub fn initial_sections(config: &ExperimentConfig, seed: u64) -> Result<(ContextCover, Vec<CausalState>)> {
    let ground = Context::range(config.dataset.n())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c0de_0000_0000);
    let cover = ContextCover::overlapping(
        &ground,
        config.cover.parts,
        config.cover.fraction,
        config.cover.min_overlap,
        &mut rng,
    );
    let sections = cover
        .parts()
        .iter()
        .map(|p| CausalState::random(p.clone(), config.init_scale, rng.random()))
        .collect::<Result<_>>()?;
    Ok((cover, sections))
}

/// Fits one seed against `truth`, querying `oracle` when given (the
/// ablation may still disable it).
pub fn run_seed(
    config: &ExperimentConfig,
    seed: u64,
    truth: &GroundTruth,
    oracle: Option<&mut dyn Oracle>,
    observer: &mut dyn FnMut(usize, &LossBreakdown),
) -> Result<SeedRun> {
    config.validate()?;
    if truth.graph.n() != config.dataset.n() {
        return Err(Error::InvalidDimension(format!(
            "ground truth has {} variables, dataset expects {}",
            truth.graph.n(),
            config.dataset.n()
        )));
    }
    let (cover, sections) = initial_sections(config, seed)?;
    let opt = config.effective_optimizer();

    let (fit, answers, budget) = match oracle.filter(|_| config.uses_oracle()) {
        Some(oracle) => {
            let mut q = ActiveQuerier::new(oracle, config.budget, config.strategy(seed), config.queries_per_round);
            let fit = fit_observed(sections, &cover, &mut q as &mut dyn BeliefSource, &opt, observer)?;
            let budget = q.budget;
            (fit, q.into_answers(), budget)
        }
        None => {
            let fit = fit_observed(sections, &cover, &mut NoBeliefs, &opt, observer)?;
            (fit, Vec::new(), config.budget)
        }
    };

    let weights = global_weights(&fit.sections, &cover)?;
    let global = CausalState::from_parts(cover.ground().clone(), weights, Mat::identity(cover.ground().len(), cover.ground().len()))?;
    let estimate = global.discretize(config.threshold);
    let result = SeedResult {
        seed,
        completed: true,
        error: None,
        shd: Some(shd(&estimate, &truth.graph)?),
        f1: Some(f1(&estimate, &truth.graph)?),
        sid: sid(&estimate, &truth.graph).ok(),
        true_edges: truth.graph.edge_count(),
        estimated_edges: Some(estimate.edge_count()),
        final_loss: Some(fit.final_loss),
        steps: fit.trajectory.steps.len(),
        converged_at: fit.trajectory.converged_at,
        obstruction_steps: fit.trajectory.obstructions.len(),
        queries_used: if config.uses_oracle() { budget.used_queries } else { 0 },
        tokens_used: if config.uses_oracle() { budget.used_tokens } else { 0 },
    };
    Ok(SeedRun { result, trajectory: fit.trajectory, sections: fit.sections, estimate, answers })
}

/// Sequential run over all seeds with generated truths and the simulator.
/// Errors are recorded per seed.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentRecord> {
    config.validate()?;
    if matches!(config.oracle, OracleSpec::Llm(_)) && config.uses_oracle() {
        return Err(Error::InvalidConfig("LLM oracles are driven by the holograph crate".into()));
    }
    let mut seeds = Vec::new();
    for &seed in &config.seeds {
        let truth = config.dataset.generate(seed)?;
        let mut sim = config.simulated_oracle(seed, &truth)?;
        let oracle = sim.as_mut().map(|s| s as &mut dyn Oracle);
        seeds.push(match run_seed(config, seed, &truth, oracle, &mut |_, _| {}) {
            Ok(run) => run.result,
            Err(e) => SeedResult::failed(seed, truth.graph.edge_count(), &e),
        });
    }
    Ok(ExperimentRecord::new(config.clone(), seeds))
}
