//! Active query selection: candidate scoring, the query budget, the
//! ground-truth simulator, and the prompt/reply contract used by language
//! model oracles.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::causal_model::{BinaryGraph, CausalState};
use crate::error::{Error, Result};
use crate::latent_projection::{Projection, DEFAULT_EPS};
use crate::linalg::Mat;
use crate::objective::EdgeBelief;
use crate::optimizer::BeliefSource;
use crate::sheaf::{average_entries, ContextCover};

/// Epistemic values at or below this are never queried.
pub const UNCERTAINTY_THRESHOLD: f64 = 0.3;

const THRESHOLD_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    EdgeExistence,
    Direction,
    Mechanism,
    Confounder,
}

impl QueryKind {
    pub const ALL: [QueryKind; 4] =
        [QueryKind::EdgeExistence, QueryKind::Direction, QueryKind::Mechanism, QueryKind::Confounder];

    fn tag(self) -> u64 {
        match self {
            QueryKind::EdgeExistence => 1,
            QueryKind::Direction => 2,
            QueryKind::Mechanism => 3,
            QueryKind::Confounder => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryCandidate {
    pub kind: QueryKind,
    pub i: usize,
    pub j: usize,
    pub epistemic: f64,
    pub instrumental: f64,
    pub efe_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleAnswer {
    pub belief: f64,
    pub confidence: f64,
    pub tokens_used: u64,
    pub raw_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Budget {
    pub max_queries: u64,
    pub max_tokens: u64,
    pub used_queries: u64,
    pub used_tokens: u64,
}

impl Default for Budget {
    fn default() -> Self {
        Budget::new(100, 500_000)
    }
}

impl Budget {
    pub fn new(max_queries: u64, max_tokens: u64) -> Self {
        Budget { max_queries, max_tokens, used_queries: 0, used_tokens: 0 }
    }

    pub fn remaining_queries(&self) -> u64 {
        self.max_queries - self.used_queries
    }

    pub fn is_exhausted(&self) -> bool {
        self.used_queries >= self.max_queries || self.used_tokens >= self.max_tokens
    }

    /// Claims one query. Must succeed before any request is sent.
    pub fn reserve(&mut self) -> Result<()> {
        if self.is_exhausted() {
            return Err(Error::BudgetExhausted);
        }
        self.used_queries += 1;
        Ok(())
    }

    /// Adds reported token usage, saturating at the maximum.
    pub fn record_tokens(&mut self, tokens: u64) {
        self.used_tokens = self.used_tokens.saturating_add(tokens).min(self.max_tokens);
    }
}

/// `1 − 2·|clamp(|w|, 0, 1) − 0.5|`.
pub fn epistemic_value(w: f64) -> f64 {
    let b = libm::fabs(w).clamp(0.0, 1.0);
    1.0 - 2.0 * libm::fabs(b - 0.5)
}

/// Squared disagreement of the projected `W` entries, per ordered id pair,
/// summed over all part pairs whose overlap holds both ids.
fn disagreement_table(sections: &[CausalState], cover: &ContextCover) -> Result<BTreeMap<(usize, usize), f64>> {
    let mut table = BTreeMap::new();
    for (a, b, v) in cover.intersections() {
        let sa = &sections[*a];
        let sb = &sections[*b];
        let pa = Projection::compute(sa.w(), &sa.covariance(), &sa.context().positions_of(v)?, DEFAULT_EPS)?;
        let pb = Projection::compute(sb.w(), &sb.covariance(), &sb.context().positions_of(v)?, DEFAULT_EPS)?;
        let ids = v.ids();
        for (p, &i) in ids.iter().enumerate() {
            for (q, &j) in ids.iter().enumerate() {
                if p != q {
                    let d = pa.w[(p, q)] - pb.w[(p, q)];
                    *table.entry((i, j)).or_insert(0.0) += d * d;
                }
            }
        }
    }
    Ok(table)
}

pub fn instrumental_value(i: usize, j: usize, sections: &[CausalState], cover: &ContextCover) -> Result<f64> {
    if !sections.iter().any(|s| s.context().contains(i) && s.context().contains(j)) {
        return Err(Error::DanglingBelief { i, j });
    }
    Ok(disagreement_table(sections, cover)?.get(&(i, j)).copied().unwrap_or(0.0))
}

/// Relative weights of the two EFE terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfeWeights {
    pub epistemic: f64,
    pub instrumental: f64,
}

impl Default for EfeWeights {
    fn default() -> Self {
        EfeWeights { epistemic: 1.0, instrumental: 1.0 }
    }
}

/// Scores every ordered pair that some section covers. The weight behind
/// the epistemic term is the mean of that entry over the covering sections.
/// Sorted by ascending EFE, ties by `(i, j)`.
pub fn score_candidates(
    sections: &[CausalState],
    cover: &ContextCover,
    weights: &EfeWeights,
) -> Result<Vec<QueryCandidate>> {
    let ground = cover.ground();
    let n = ground.len();
    let positions: Vec<Vec<usize>> = sections.iter().map(|s| ground.positions_of(s.context())).collect::<Result<_>>()?;
    let blocks: Vec<&Mat> = sections.iter().map(|s| s.w()).collect();
    let mean_w = average_entries(n, &positions, &blocks);
    let mut covered = Mat::zeros(n, n);
    for obs in &positions {
        for &p in obs {
            for &q in obs {
                covered[(p, q)] = 1.0;
            }
        }
    }
    let disagreement = disagreement_table(sections, cover)?;
    let ids = ground.ids();
    let mut out = Vec::new();
    for p in 0..n {
        for q in 0..n {
            if p == q || covered[(p, q)] == 0.0 {
                continue;
            }
            let (i, j) = (ids[p], ids[q]);
            let epistemic = epistemic_value(mean_w[(p, q)]);
            let instrumental = disagreement.get(&(i, j)).copied().unwrap_or(0.0);
            let efe_score = -(weights.epistemic * epistemic + weights.instrumental * instrumental);
            out.push(QueryCandidate { kind: QueryKind::EdgeExistence, i, j, epistemic, instrumental, efe_score });
        }
    }
    out.sort_by(|a, b| a.efe_score.total_cmp(&b.efe_score).then((a.i, a.j).cmp(&(b.i, b.j))));
    Ok(out)
}

fn above_threshold(c: &QueryCandidate, threshold: f64) -> bool {
    c.epistemic > threshold + THRESHOLD_SLACK
}

/// The `k` lowest-EFE candidates whose epistemic value clears the threshold,
/// capped by the remaining budget.
pub fn select_queries(
    sections: &[CausalState],
    cover: &ContextCover,
    budget: &Budget,
    k: usize,
    uncertainty_threshold: f64,
) -> Result<Vec<QueryCandidate>> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be >= 1".into()));
    }
    if budget.is_exhausted() {
        return Err(Error::BudgetExhausted);
    }
    let take = k.min(budget.remaining_queries() as usize);
    Ok(score_candidates(sections, cover, &EfeWeights::default())?
        .into_iter()
        .filter(|c| above_threshold(c, uncertainty_threshold))
        .take(take)
        .collect())
}

/// Deterministic smooth weighted round-robin over query kinds, 9:5:4:2
/// (45/25/20/10 percent over every 20 draws).
#[derive(Debug, Clone, PartialEq)]
pub struct KindSchedule {
    weights: [i64; 4],
    current: [i64; 4],
}

impl Default for KindSchedule {
    fn default() -> Self {
        KindSchedule::new([9, 5, 4, 2])
    }
}

impl KindSchedule {
    pub fn new(weights: [i64; 4]) -> Self {
        KindSchedule { weights, current: [0; 4] }
    }

    pub fn next_kind(&mut self) -> QueryKind {
        let total: i64 = self.weights.iter().sum();
        for (c, w) in self.current.iter_mut().zip(self.weights) {
            *c += w;
        }
        let mut best = 0;
        for k in 1..4 {
            if self.current[k] > self.current[best] {
                best = k;
            }
        }
        self.current[best] -= total;
        QueryKind::ALL[best]
    }
}

pub trait Oracle {
    /// Answers one query. Implementations reserve budget before doing any
    /// work and return `BudgetExhausted` without side effects otherwise.
    fn ask(&mut self, query: &QueryCandidate, budget: &mut Budget) -> Result<OracleAnswer>;
}

/// Answers from a known ground truth with seeded, per-query label noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedOracle {
    pub truth: BinaryGraph,
    /// Unordered pairs (smaller id first) that share a hidden parent.
    pub latent_pairs: BTreeSet<(usize, usize)>,
    pub noise_rate: f64,
    pub seed: u64,
}

impl SimulatedOracle {
    pub fn new(truth: BinaryGraph, latent_pairs: &[(usize, usize)], noise_rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..0.5).contains(&noise_rate) {
            return Err(Error::InvalidConfig(format!("noise_rate must lie in [0, 0.5), got {noise_rate}")));
        }
        let latent_pairs = latent_pairs.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
        Ok(SimulatedOracle { truth, latent_pairs, noise_rate, seed })
    }

    /// Pure answer function; no budget involved.
    pub fn answer(&self, query: &QueryCandidate) -> OracleAnswer {
        let (i, j) = (query.i, query.j);
        let holds = match query.kind {
            QueryKind::EdgeExistence | QueryKind::Mechanism => Some(self.truth.has_edge(i, j)),
            QueryKind::Direction => match (self.truth.has_edge(i, j), self.truth.has_edge(j, i)) {
                (true, _) => Some(true),
                (false, true) => Some(false),
                (false, false) => None,
            },
            QueryKind::Confounder => Some(self.latent_pairs.contains(&(i.min(j), i.max(j)))),
        };
        let Some(holds) = holds else {
            return OracleAnswer { belief: 0.5, confidence: 0.0, tokens_used: 0, raw_text: String::new() };
        };
        let base = if holds { 0.95 } else { 0.05 };
        let mut rng = ChaCha8Rng::seed_from_u64(query_seed(self.seed, query));
        let flipped = self.noise_rate > 0.0 && rng.random::<f64>() < self.noise_rate;
        OracleAnswer {
            belief: if flipped { 1.0 - base } else { base },
            confidence: 1.0 - self.noise_rate,
            tokens_used: 0,
            raw_text: String::new(),
        }
    }
}

fn query_seed(seed: u64, q: &QueryCandidate) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [q.kind.tag(), q.i as u64, q.j as u64] {
        h = splitmix(h ^ v);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Oracle for SimulatedOracle {
    fn ask(&mut self, query: &QueryCandidate, budget: &mut Budget) -> Result<OracleAnswer> {
        budget.reserve()?;
        Ok(self.answer(query))
    }
}

impl<O: Oracle + ?Sized> Oracle for &mut O {
    fn ask(&mut self, query: &QueryCandidate, budget: &mut Budget) -> Result<OracleAnswer> {
        (**self).ask(query, budget)
    }
}

/// Turns answers into edge beliefs; later answers about the same ordered
/// pair win. Confounder answers yield nothing.
pub fn answers_to_beliefs(answers: &[(QueryCandidate, OracleAnswer)]) -> Vec<EdgeBelief> {
    let mut latest: BTreeMap<(usize, usize), EdgeBelief> = BTreeMap::new();
    let mut put = |i: usize, j: usize, b: f64, c: f64| {
        if let Ok(belief) = EdgeBelief::new(i, j, b.clamp(0.0, 1.0), c.clamp(0.0, 1.0)) {
            latest.insert((i, j), belief);
        }
    };
    for (q, a) in answers {
        match q.kind {
            QueryKind::EdgeExistence | QueryKind::Mechanism => put(q.i, q.j, a.belief, a.confidence),
            QueryKind::Direction => {
                put(q.i, q.j, a.belief, a.confidence);
                put(q.j, q.i, 1.0 - a.belief, a.confidence);
            }
            QueryKind::Confounder => {}
        }
    }
    latest.into_values().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SelectionStrategy {
    /// Lowest expected free energy first.
    Efe,
    /// Uniform sampling among candidates above the threshold.
    Random { seed: u64 },
}

/// Belief source that queries an oracle every refresh.
pub struct ActiveQuerier<O: Oracle> {
    pub oracle: O,
    pub budget: Budget,
    pub strategy: SelectionStrategy,
    pub per_round: usize,
    pub threshold: f64,
    pub efe_weights: EfeWeights,
    schedule: KindSchedule,
    answers: Vec<(QueryCandidate, OracleAnswer)>,
    asked: BTreeSet<(usize, usize)>,
    rng: ChaCha8Rng,
    exhausted: bool,
}

impl<O: Oracle> ActiveQuerier<O> {
    pub fn new(oracle: O, budget: Budget, strategy: SelectionStrategy, per_round: usize) -> Self {
        let seed = match strategy {
            SelectionStrategy::Random { seed } => seed,
            SelectionStrategy::Efe => 0,
        };
        ActiveQuerier {
            oracle,
            budget,
            strategy,
            per_round: per_round.max(1),
            threshold: UNCERTAINTY_THRESHOLD,
            efe_weights: EfeWeights::default(),
            schedule: KindSchedule::default(),
            answers: Vec::new(),
            asked: BTreeSet::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            exhausted: false,
        }
    }

    pub fn answers(&self) -> &[(QueryCandidate, OracleAnswer)] {
        &self.answers
    }

    pub fn into_answers(self) -> Vec<(QueryCandidate, OracleAnswer)> {
        self.answers
    }

    fn pick(&mut self, sections: &[CausalState], cover: &ContextCover) -> Result<Vec<QueryCandidate>> {
        let take = self.per_round.min(self.budget.remaining_queries() as usize);
        let mut pool: Vec<QueryCandidate> = score_candidates(sections, cover, &self.efe_weights)?
            .into_iter()
            .filter(|c| above_threshold(c, self.threshold) && !self.asked.contains(&(c.i, c.j)))
            .collect();
        if let SelectionStrategy::Random { .. } = self.strategy {
            pool.shuffle(&mut self.rng);
        }
        pool.truncate(take);
        Ok(pool)
    }
}

impl<O: Oracle> BeliefSource for ActiveQuerier<O> {
    fn refresh(&mut self, _step: usize, sections: &[CausalState], cover: &ContextCover) -> Result<Option<Vec<EdgeBelief>>> {
        if self.exhausted || self.budget.is_exhausted() {
            self.exhausted = true;
            return Ok(None);
        }
        let picked = self.pick(sections, cover)?;
        let before = self.answers.len();
        for mut q in picked {
            q.kind = self.schedule.next_kind();
            match self.oracle.ask(&q, &mut self.budget) {
                Ok(a) => {
                    self.asked.insert((q.i, q.j));
                    if q.kind == QueryKind::Direction {
                        self.asked.insert((q.j, q.i));
                    }
                    self.answers.push((q, a));
                }
                Err(Error::BudgetExhausted) => {
                    self.exhausted = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        Ok((self.answers.len() > before).then(|| answers_to_beliefs(&self.answers)))
    }
}

pub const SYSTEM_PROMPT: &str = "You are a careful domain expert in causal reasoning.";

const ANSWER_FORMAT: &str =
    "Answer yes or no first, then give your confidence on its own line as 'Confidence: high', 'Confidence: medium' or 'Confidence: low'.";

pub const REPROMPT: &str =
    "Your previous reply did not contain a clear verdict. Reply with 'yes' or 'no' first, then 'Confidence: high', 'Confidence: medium' or 'Confidence: low'.";

/// User message for one query about variables named `a` and `b`.
pub fn render_prompt(kind: QueryKind, a: &str, b: &str) -> String {
    let question = match kind {
        QueryKind::EdgeExistence => format!("Does {a} directly cause {b}?"),
        QueryKind::Direction => {
            format!("{a} and {b} are causally related. Does the causal influence run from {a} to {b}?")
        }
        QueryKind::Mechanism => format!("Is there a direct physical or biological mechanism by which {a} changes {b}?"),
        QueryKind::Confounder => format!("Are {a} and {b} both influenced by a common unobserved cause?"),
    };
    format!("{question} {ANSWER_FORMAT}")
}

/// Verdict and optional stated confidence extracted from a reply.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParsedReply {
    pub verdict: bool,
    pub confidence: Option<f64>,
}

/// Confidence assumed when a reply gives a verdict but no confidence.
pub const DEFAULT_CONFIDENCE: f64 = 0.75;

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '.' || c == '%'))
        .map(|w| w.trim_end_matches('.').to_ascii_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

fn confidence_word(w: &str) -> Option<f64> {
    match w {
        "high" | "very" => Some(0.9),
        "medium" | "moderate" => Some(0.6),
        "low" => Some(0.3),
        _ => {
            let (num, percent) = match w.strip_suffix('%') {
                Some(n) => (n, true),
                None => (w, false),
            };
            let v: f64 = num.parse().ok()?;
            let v = if percent || v > 1.0 { v / 100.0 } else { v };
            (0.0..=1.0).contains(&v).then_some(v)
        }
    }
}

/// First standalone `yes`/`no` decides the verdict; a confidence is read
/// from the word after `confidence`, or the word before it
/// (`high confidence`).
pub fn parse_reply(text: &str) -> Option<ParsedReply> {
    let ws = words(text);
    let verdict = ws.iter().find_map(|w| match w.as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    })?;
    let mut confidence = None;
    for (k, w) in ws.iter().enumerate() {
        if w == "confidence" {
            confidence = ws
                .get(k + 1)
                .and_then(|n| confidence_word(n))
                .or_else(|| k.checked_sub(1).and_then(|p| confidence_word(&ws[p])));
            if confidence.is_some() {
                break;
            }
        }
    }
    Some(ParsedReply { verdict, confidence })
}

/// Answer for a parsed reply: belief 0.95 / 0.05 by verdict at the stated
/// confidence; no verdict gives belief 0.5 at confidence 0.
pub fn answer_from_reply(parsed: Option<ParsedReply>, tokens_used: u64, raw_text: &str) -> OracleAnswer {
    let (belief, confidence) = match parsed {
        Some(p) => (if p.verdict { 0.95 } else { 0.05 }, p.confidence.unwrap_or(DEFAULT_CONFIDENCE)),
        None => (0.5, 0.0),
    };
    OracleAnswer { belief, confidence, tokens_used, raw_text: raw_text.to_string() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::causal_model::Context;

    fn state_with(n: usize, entries: &[(usize, usize, f64)]) -> CausalState {
        let mut w = Mat::zeros(n, n);
        for &(i, j, v) in entries {
            w[(i, j)] = v;
        }
        CausalState::from_parts(Context::range(n).unwrap(), w, Mat::identity(n, n)).unwrap()
    }

    fn cand(kind: QueryKind, i: usize, j: usize) -> QueryCandidate {
        QueryCandidate { kind, i, j, epistemic: 1.0, instrumental: 0.0, efe_score: -1.0 }
    }

    #[test]
    fn epistemic_examples() {
        assert_eq!(epistemic_value(0.5), 1.0);
        assert_eq!(epistemic_value(-0.5), 1.0);
        assert_eq!(epistemic_value(0.0), 0.0);
        assert_eq!(epistemic_value(1.0), 0.0);
        assert_eq!(epistemic_value(3.0), 0.0);
        assert!((epistemic_value(0.9) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn instrumental_examples() {
        let c = Context::range(3).unwrap();
        let a = state_with(3, &[(0, 1, 0.2)]);
        let b = state_with(3, &[(0, 1, 0.5)]);
        let cover = ContextCover::new(c.clone(), alloc::vec![c.clone(), c.clone()]).unwrap();
        assert!((instrumental_value(0, 1, &[a.clone(), b], &cover).unwrap() - 0.09).abs() < 1e-12);
        assert_eq!(instrumental_value(1, 0, &[a.clone(), a.clone()], &cover).unwrap(), 0.0);
        let single = ContextCover::single(c);
        assert_eq!(instrumental_value(0, 1, &[a], &single).unwrap(), 0.0);
    }

    #[test]
    fn selection_prefers_the_boundary() {
        let s = state_with(3, &[(0, 1, 0.9), (1, 2, 0.5), (0, 2, 1.0), (1, 0, 1.0), (2, 0, 1.0), (2, 1, 1.0)]);
        let cover = ContextCover::single(s.context().clone());
        let picked = select_queries(&[s], &cover, &Budget::default(), 5, UNCERTAINTY_THRESHOLD).unwrap();
        assert_eq!(picked.len(), 1);
        assert_eq!((picked[0].i, picked[0].j), (1, 2));
    }

    #[test]
    fn threshold_is_strict() {
        let entries: Vec<(usize, usize, f64)> =
            (0..3).flat_map(|i| (0..3).filter(move |&j| j != i).map(move |j| (i, j, 0.85))).collect();
        let s = state_with(3, &entries);
        let cover = ContextCover::single(s.context().clone());
        assert!(select_queries(&[s], &cover, &Budget::default(), 5, UNCERTAINTY_THRESHOLD).unwrap().is_empty());
    }

    #[test]
    fn selection_respects_budget_and_ties() {
        let entries: Vec<(usize, usize, f64)> =
            (0..4).flat_map(|i| (0..4).filter(move |&j| j != i).map(move |j| (i, j, 0.5))).collect();
        let s = state_with(4, &entries);
        let cover = ContextCover::single(s.context().clone());
        let mut budget = Budget::new(3, 1000);
        budget.reserve().unwrap();
        let picked = select_queries(core::slice::from_ref(&s), &cover, &budget, 10, UNCERTAINTY_THRESHOLD).unwrap();
        assert_eq!(picked.iter().map(|c| (c.i, c.j)).collect::<Vec<_>>(), alloc::vec![(0, 1), (0, 2)]);
        budget.reserve().unwrap();
        budget.reserve().unwrap();
        assert_eq!(
            select_queries(&[s], &cover, &budget, 1, UNCERTAINTY_THRESHOLD),
            Err(Error::BudgetExhausted)
        );
    }

    #[test]
    fn budget_counts() {
        let mut b = Budget::new(2, 10);
        b.reserve().unwrap();
        b.record_tokens(4);
        b.record_tokens(u64::MAX);
        assert_eq!(b.used_tokens, 10);
        assert_eq!(b.reserve(), Err(Error::BudgetExhausted));
        let mut b = Budget::new(2, 10);
        b.reserve().unwrap();
        b.reserve().unwrap();
        assert_eq!(b.reserve(), Err(Error::BudgetExhausted));
        assert_eq!(b.used_queries, 2);
    }

    #[test]
    fn schedule_matches_proportions() {
        let mut s = KindSchedule::default();
        let mut counts = BTreeMap::new();
        for _ in 0..20 {
            *counts.entry(s.next_kind()).or_insert(0) += 1;
        }
        assert_eq!(counts[&QueryKind::EdgeExistence], 9);
        assert_eq!(counts[&QueryKind::Direction], 5);
        assert_eq!(counts[&QueryKind::Mechanism], 4);
        assert_eq!(counts[&QueryKind::Confounder], 2);
    }

    #[test]
    fn simulator_answers() {
        let truth = BinaryGraph::from_edges(3, &[(0, 1)]).unwrap();
        let sim = SimulatedOracle::new(truth.clone(), &[(2, 1)], 0.0, 42).unwrap();
        assert_eq!(sim.answer(&cand(QueryKind::EdgeExistence, 0, 1)).belief, 0.95);
        assert_eq!(sim.answer(&cand(QueryKind::EdgeExistence, 1, 0)).belief, 0.05);
        assert_eq!(sim.answer(&cand(QueryKind::Direction, 1, 0)).belief, 0.05);
        assert_eq!(sim.answer(&cand(QueryKind::Confounder, 1, 2)).belief, 0.95);
        let none = sim.answer(&cand(QueryKind::Direction, 0, 2));
        assert_eq!((none.belief, none.confidence), (0.5, 0.0));
        assert_eq!(sim.answer(&cand(QueryKind::EdgeExistence, 0, 1)).confidence, 1.0);

        let noisy = SimulatedOracle::new(truth, &[], 0.3, 7).unwrap();
        let q = cand(QueryKind::EdgeExistence, 0, 1);
        assert_eq!(noisy.answer(&q), noisy.answer(&q));
        assert!(SimulatedOracle::new(BinaryGraph::from_edges(2, &[]).unwrap(), &[], 0.5, 0).is_err());
    }

    #[test]
    fn simulator_flip_rate_tracks_noise() {
        let mut edges = Vec::new();
        for i in 0..40 {
            for j in (i + 1)..40 {
                edges.push((i, j));
            }
        }
        let sim = SimulatedOracle::new(BinaryGraph::from_edges(40, &edges).unwrap(), &[], 0.2, 3).unwrap();
        let flips = edges.iter().filter(|&&(i, j)| sim.answer(&cand(QueryKind::EdgeExistence, i, j)).belief < 0.5).count();
        let rate = flips as f64 / edges.len() as f64;
        assert!((rate - 0.2).abs() < 0.04, "{rate}");
    }

    #[test]
    fn beliefs_from_answers() {
        assert!(answers_to_beliefs(&[]).is_empty());
        let ans = |b: f64| OracleAnswer { belief: b, confidence: 0.8, tokens_used: 0, raw_text: String::new() };
        let out = answers_to_beliefs(&[(cand(QueryKind::Direction, 2, 5), ans(0.9))]);
        assert_eq!(out.len(), 2);
        assert_eq!((out[0].i, out[0].j, out[0].belief), (2, 5, 0.9));
        assert_eq!((out[1].i, out[1].j), (5, 2));
        assert!((out[1].belief - 0.1).abs() < 1e-12);
        let out = answers_to_beliefs(&[
            (cand(QueryKind::EdgeExistence, 0, 1), ans(0.95)),
            (cand(QueryKind::Mechanism, 0, 1), ans(0.05)),
            (cand(QueryKind::Confounder, 0, 2), ans(0.95)),
        ]);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].belief, 0.05);
    }

    #[test]
    fn querier_stops_at_budget() {
        let truth = BinaryGraph::from_edges(4, &[(0, 1), (2, 3)]).unwrap();
        let sim = SimulatedOracle::new(truth, &[], 0.0, 1).unwrap();
        let entries: Vec<(usize, usize, f64)> =
            (0..4).flat_map(|i| (0..4).filter(move |&j| j != i).map(move |j| (i, j, 0.4))).collect();
        let s = state_with(4, &entries);
        let cover = ContextCover::single(s.context().clone());
        let mut q = ActiveQuerier::new(sim, Budget::new(5, 100), SelectionStrategy::Efe, 4);
        assert!(q.refresh(0, core::slice::from_ref(&s), &cover).unwrap().is_some());
        assert!(q.refresh(50, core::slice::from_ref(&s), &cover).unwrap().is_some());
        assert_eq!(q.budget.used_queries, 5);
        assert_eq!(q.refresh(100, &[s], &cover).unwrap(), None);
        let asked: BTreeSet<_> = q.answers().iter().map(|(c, _)| (c.i, c.j)).collect();
        assert_eq!(asked.len(), 5);
    }

    #[test]
    fn prompts_name_both_variables() {
        for kind in QueryKind::ALL {
            let p = render_prompt(kind, "smoking", "cancer");
            assert!(p.contains("smoking") && p.contains("cancer"));
            assert!(p.contains("Confidence"));
        }
    }

    #[test]
    fn reply_parsing() {
        let p = parse_reply("Yes, smoking causes cancer. Confidence: high").unwrap();
        assert_eq!(p, ParsedReply { verdict: true, confidence: Some(0.9) });
        assert_eq!(answer_from_reply(Some(p), 12, "").belief, 0.95);
        let p = parse_reply("No. I have low confidence in any link.").unwrap();
        assert_eq!(p, ParsedReply { verdict: false, confidence: Some(0.3) });
        assert_eq!(parse_reply("NO\nConfidence: 80%").unwrap().confidence, Some(0.8));
        assert_eq!(parse_reply("yes (confidence 0.65)").unwrap().confidence, Some(0.65));
        assert_eq!(parse_reply("Yes.").unwrap().confidence, None);
        assert!(parse_reply("It is unclear; the evidence is mixed.").is_none());
        assert!(parse_reply("Nobody knows, yesterday was odd").is_none());
        let fallback = answer_from_reply(None, 3, "hmm");
        assert_eq!((fallback.belief, fallback.confidence, fallback.tokens_used), (0.5, 0.0, 3));
        assert_eq!(answer_from_reply(parse_reply("yes"), 0, "").confidence, DEFAULT_CONFIDENCE);
    }
}
