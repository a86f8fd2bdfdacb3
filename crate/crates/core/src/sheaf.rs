//! Presheaf axiom checks over covers of a ground context, gluing of local
//! sections, and the seeded exactness suite.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::causal_model::{CausalState, Context};
use crate::error::{Error, Result};
use crate::latent_projection::{project, Projection, DEFAULT_EPS};
use crate::linalg::{frobenius_norm, frobenius_sq, max_abs_diff, psd_cholesky, Mat};

/// Pass threshold for every axiom.
pub const AXIOM_THRESHOLD: f64 = 1e-6;

/// Overlap disagreement above which locals are refused for gluing.
pub const INCOMPATIBLE_TOL: f64 = 0.1;

const GLUE_MAX_STEPS: usize = 200;
const GLUE_MIN_IMPROVEMENT: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axiom {
    Identity,
    Transitivity,
    Locality,
    Gluing,
}

impl Axiom {
    pub const ALL: [Axiom; 4] = [Axiom::Identity, Axiom::Transitivity, Axiom::Locality, Axiom::Gluing];

    pub fn name(self) -> &'static str {
        match self {
            Axiom::Identity => "identity",
            Axiom::Transitivity => "transitivity",
            Axiom::Locality => "locality",
            Axiom::Gluing => "gluing",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxiomReport {
    pub axiom: Axiom,
    pub error: f64,
    pub passed: bool,
    pub threshold: f64,
}

impl AxiomReport {
    pub fn new(axiom: Axiom, error: f64) -> Self {
        AxiomReport { axiom, error, passed: error < AXIOM_THRESHOLD, threshold: AXIOM_THRESHOLD }
    }
}

/// A family of sub-contexts whose union is the ground context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextCover {
    ground: Context,
    parts: Vec<Context>,
    /// `(i, j, U_i ∩ U_j)` for every `i < j` with a nonempty intersection.
    intersections: Vec<(usize, usize, Context)>,
}

impl ContextCover {
    pub fn new(ground: Context, parts: Vec<Context>) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::InvalidContext("a cover needs at least one part".into()));
        }
        for p in &parts {
            if !p.is_subset(&ground) {
                return Err(Error::InvalidContext(format!("part {:?} is not inside the ground", p.ids())));
            }
        }
        for &id in ground.ids() {
            if !parts.iter().any(|p| p.contains(id)) {
                return Err(Error::InvalidContext(format!("variable {id} is not covered")));
            }
        }
        let mut intersections = Vec::new();
        for i in 0..parts.len() {
            for j in (i + 1)..parts.len() {
                if let Some(v) = parts[i].intersection(&parts[j]) {
                    intersections.push((i, j, v));
                }
            }
        }
        Ok(ContextCover { ground, parts, intersections })
    }

    /// The trivial cover `{ground}`.
    pub fn single(ground: Context) -> Self {
        ContextCover { parts: alloc::vec![ground.clone()], ground, intersections: Vec::new() }
    }

    /// Random cover by parts of size `⌈fraction·n⌉`, each drawn without
    /// replacement. A new part takes still-uncovered variables first and is
    /// filled up at random; parts are added until the ground is covered and
    /// at least `min_parts` exist.
    pub fn random(ground: &Context, fraction: f64, min_parts: usize, rng: &mut impl Rng) -> Self {
        let n = ground.len();
        let size = (libm::ceil(fraction * n as f64) as usize).clamp(1, n);
        let mut covered = alloc::vec![false; n];
        let mut parts: Vec<Context> = Vec::new();
        while parts.len() < min_parts.max(1) || covered.iter().any(|c| !c) {
            let mut uncovered: Vec<usize> = (0..n).filter(|&p| !covered[p]).collect();
            uncovered.shuffle(rng);
            let mut chosen: Vec<usize> = uncovered.into_iter().take(size).collect();
            let mut rest: Vec<usize> = (0..n).filter(|p| !chosen.contains(p)).collect();
            rest.shuffle(rng);
            let missing = size - chosen.len();
            chosen.extend(rest.into_iter().take(missing));
            for &p in &chosen {
                covered[p] = true;
            }
            let ids = chosen.iter().map(|&p| ground.ids()[p]).collect();
            parts.push(Context::from_unsorted(ids).expect("nonempty part"));
        }
        ContextCover::new(ground.clone(), parts).expect("random cover is valid by construction")
    }

    /// Random cover with exactly `count` parts of size `⌈fraction·n⌉` where
    /// every pair of parts shares at least `min_overlap` variables (parts are
    /// grown when the sizes alone cannot guarantee it).
    pub fn overlapping(
        ground: &Context,
        count: usize,
        fraction: f64,
        min_overlap: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let n = ground.len();
        if count <= 1 || n < 3 {
            return ContextCover::single(ground.clone());
        }
        let base = ContextCover::random(ground, fraction, count, rng);
        let mut parts: Vec<Vec<usize>> =
            base.parts.iter().take(count).map(|p| p.ids().to_vec()).collect();
        // the first `count` parts need not cover on their own
        for &id in ground.ids() {
            if !parts.iter().any(|p| p.contains(&id)) {
                let k = rng.random_range(0..count);
                parts[k].push(id);
            }
        }
        let need = min_overlap.min(n);
        for a in 0..count {
            for b in (a + 1)..count {
                let mut shared = parts[a].iter().filter(|id| parts[b].contains(id)).count();
                let mut candidates: Vec<usize> =
                    parts[a].iter().copied().filter(|id| !parts[b].contains(id)).collect();
                candidates.shuffle(rng);
                while shared < need {
                    match candidates.pop() {
                        Some(id) => {
                            parts[b].push(id);
                            shared += 1;
                        }
                        None => break,
                    }
                }
            }
        }
        let parts = parts.into_iter().map(|p| Context::from_unsorted(p).expect("nonempty")).collect();
        ContextCover::new(ground.clone(), parts).expect("overlapping cover is valid by construction")
    }

    pub fn ground(&self) -> &Context {
        &self.ground
    }

    pub fn parts(&self) -> &[Context] {
        &self.parts
    }

    pub fn intersections(&self) -> &[(usize, usize, Context)] {
        &self.intersections
    }
}

/// Restriction to the full context must return the section unchanged.
pub fn check_identity(state: &CausalState) -> AxiomReport {
    let error = match project(state, state.context(), DEFAULT_EPS) {
        Ok(p) => max_abs_diff(p.w(), state.w()).max(max_abs_diff(&p.covariance(), &state.covariance())),
        Err(_) => f64::INFINITY,
    };
    AxiomReport::new(Axiom::Identity, error)
}

/// Compares `ρ_Z` with `ρ_ZV ∘ ρ_V` for `Z ⊆ V ⊆ context`. The error is the
/// larger of the Frobenius differences on `W` and on `M`.
pub fn check_transitivity(state: &CausalState, v: &Context, z: &Context) -> Result<AxiomReport> {
    if !v.is_subset(state.context()) || !z.is_subset(v) {
        return Err(Error::InvalidNesting);
    }
    let direct = project(state, z, DEFAULT_EPS)?;
    let two_step = project(&project(state, v, DEFAULT_EPS)?, z, DEFAULT_EPS)?;
    let dw = frobenius_norm(&(direct.w() - two_step.w()));
    let dm = frobenius_norm(&(direct.covariance() - two_step.covariance()));
    Ok(AxiomReport::new(Axiom::Transitivity, dw.max(dm)))
}

/// Restricts `state` to every part of the cover, glues the restrictions back
/// together and reports how far the glued section lies from the original.
/// Zero error means the restrictions determine the section.
pub fn check_locality(state: &CausalState, cover: &ContextCover) -> Result<AxiomReport> {
    if cover.ground() != state.context() {
        return Err(Error::InvalidContext("cover ground differs from the state's context".into()));
    }
    let locals = restrict_to_cover(state, cover)?;
    let glued = glue_sections(&locals, cover, DEFAULT_EPS)?;
    Ok(AxiomReport::new(Axiom::Locality, section_distance(state, &glued.state)))
}

/// `sqrt(‖ΔW‖²_F + ‖ΔM‖²_F)` between two sections over the same context.
pub fn section_distance(a: &CausalState, b: &CausalState) -> f64 {
    libm::sqrt(frobenius_sq(&(a.w() - b.w())) + frobenius_sq(&(a.covariance() - b.covariance())))
}

pub fn restrict_to_cover(state: &CausalState, cover: &ContextCover) -> Result<Vec<CausalState>> {
    cover.parts().iter().map(|p| project(state, p, DEFAULT_EPS)).collect()
}

/// Result of gluing local sections.
#[derive(Debug, Clone, PartialEq)]
pub struct GlueOutcome {
    pub state: CausalState,
    /// Gluing report; its error is the residual `Σ_i ‖ρ_{U_i}(s) − s_i‖²_F`
    /// summed over `W` and `M`.
    pub report: AxiomReport,
    /// Largest disagreement between two locals restricted to their overlap.
    pub max_pairwise_mismatch: f64,
    pub steps: usize,
}

impl GlueOutcome {
    /// Whether the locals satisfied the descent condition to the axiom threshold.
    pub fn locals_compatible(&self) -> bool {
        self.max_pairwise_mismatch <= AXIOM_THRESHOLD
    }
}

/// Finds a global section whose restrictions match the locals in least
/// squares.
///
/// `W` is solved first by damped Gauss-Newton (each step a CGLS solve of
/// the linearized restriction maps, `W` diagonal held at zero), starting
/// from the entrywise average of the overlapping locals. With `W` fixed the
/// restricted covariances are linear in `M`, which is then solved by CGLS
/// and refactored with an eigenvalue floor of `eps`.
pub fn glue_sections(locals: &[CausalState], cover: &ContextCover, eps: f64) -> Result<GlueOutcome> {
    if locals.len() != cover.parts().len() {
        return Err(Error::InvalidContext(format!(
            "{} locals for a cover of {} parts",
            locals.len(),
            cover.parts().len()
        )));
    }
    for (s, p) in locals.iter().zip(cover.parts()) {
        if s.context() != p {
            return Err(Error::InvalidContext("local section context differs from its cover part".into()));
        }
    }
    let mismatch = pairwise_mismatch(locals, cover, eps)?;
    if mismatch > INCOMPATIBLE_TOL {
        return Err(Error::IncompatibleSections { mismatch });
    }

    let ground = cover.ground();
    let n = ground.len();
    let positions: Vec<Vec<usize>> =
        cover.parts().iter().map(|p| ground.positions_of(p)).collect::<Result<_>>()?;
    let target_w: Vec<&Mat> = locals.iter().map(|s| s.w()).collect();
    let target_m: Vec<Mat> = locals.iter().map(|s| s.covariance()).collect();

    let mut w = average_entries(n, &positions, &target_w);
    for i in 0..n {
        w[(i, i)] = 0.0;
    }
    let m0 = average_entries(n, &positions, &target_m.iter().collect::<Vec<_>>());

    let w_objective = |w: &Mat| -> Option<(f64, Vec<Projection>)> {
        let mut total = 0.0;
        let mut projs = Vec::with_capacity(positions.len());
        for (k, obs) in positions.iter().enumerate() {
            let p = Projection::compute(w, &m0, obs, eps).ok()?;
            total += frobenius_sq(&(&p.w - target_w[k]));
            projs.push(p);
        }
        Some((total, projs))
    };

    let (mut obj, mut projs) = w_objective(&w).ok_or(Error::NonConvergentHiddenBlock { radius: f64::NAN })?;
    let mut steps = 0;
    while steps < GLUE_MAX_STEPS && obj > 1e-28 {
        steps += 1;
        let residual: Vec<Mat> = projs.iter().enumerate().map(|(k, p)| target_w[k] - &p.w).collect();
        let delta = cgls(
            |d: &Mat| projs.iter().map(|p| p.tangent_w(d)).collect(),
            |ys: &[Mat]| {
                let mut g = Mat::zeros(n, n);
                for (p, y) in projs.iter().zip(ys) {
                    g += p.backward(y, &Mat::zeros(y.nrows(), y.ncols())).0;
                }
                for i in 0..n {
                    g[(i, i)] = 0.0;
                }
                g
            },
            &residual,
            Mat::zeros(n, n),
            300,
            1e-10,
        );
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let trial = &w + &delta * scale;
            if let Some((trial_obj, trial_projs)) = w_objective(&trial) {
                if trial_obj < obj {
                    accepted = Some((trial, trial_obj, trial_projs));
                    break;
                }
            }
            scale *= 0.5;
        }
        let Some((new_w, new_obj, new_projs)) = accepted else { break };
        let improvement = obj - new_obj;
        w = new_w;
        obj = new_obj;
        projs = new_projs;
        if improvement < GLUE_MIN_IMPROVEMENT * obj.max(f64::MIN_POSITIVE) {
            break;
        }
    }

    // Covariance: Σ_k ‖E_k M E_kᵀ − T_k‖² is linear least squares in M.
    let residual: Vec<Mat> = projs.iter().enumerate().map(|(k, p)| &target_m[k] - p.apply_m(&m0)).collect();
    let delta_m = cgls(
        |d: &Mat| projs.iter().map(|p| p.apply_m(d)).collect(),
        |ys: &[Mat]| {
            let mut g = Mat::zeros(n, n);
            for (p, y) in projs.iter().zip(ys) {
                g += p.adjoint_m(y);
            }
            g
        },
        &residual,
        Mat::zeros(n, n),
        500,
        1e-12,
    );
    let m = &m0 + delta_m;
    let l = psd_cholesky(&m, eps);
    let state = CausalState::from_parts(ground.clone(), w, l)?;

    let residual = glue_residual(&state, locals, &positions, eps)?;
    Ok(GlueOutcome {
        state,
        report: AxiomReport::new(Axiom::Gluing, residual),
        max_pairwise_mismatch: mismatch,
        steps,
    })
}

fn glue_residual(state: &CausalState, locals: &[CausalState], positions: &[Vec<usize>], eps: f64) -> Result<f64> {
    let m = state.covariance();
    let mut total = 0.0;
    for (local, obs) in locals.iter().zip(positions) {
        let p = Projection::compute(state.w(), &m, obs, eps)?;
        total += frobenius_sq(&(&p.w - local.w())) + frobenius_sq(&(&p.m - local.covariance()));
    }
    Ok(total)
}

/// Largest max-abs disagreement of two locals restricted to their overlap.
pub fn pairwise_mismatch(locals: &[CausalState], cover: &ContextCover, eps: f64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (a, b, v) in cover.intersections() {
        let pa = Projection::compute(locals[*a].w(), &locals[*a].covariance(), &locals[*a].context().positions_of(v)?, eps)?;
        let pb = Projection::compute(locals[*b].w(), &locals[*b].covariance(), &locals[*b].context().positions_of(v)?, eps)?;
        worst = worst.max(max_abs_diff(&pa.w, &pb.w)).max(max_abs_diff(&pa.m, &pb.m));
    }
    Ok(worst)
}

/// Entrywise mean over the blocks that observe each (row, column) pair;
/// zero where no block does.
pub fn average_entries(n: usize, positions: &[Vec<usize>], blocks: &[&Mat]) -> Mat {
    let mut sum = Mat::zeros(n, n);
    let mut count = Mat::zeros(n, n);
    for (obs, block) in positions.iter().zip(blocks) {
        for (r, &i) in obs.iter().enumerate() {
            for (c, &j) in obs.iter().enumerate() {
                sum[(i, j)] += block[(r, c)];
                count[(i, j)] += 1.0;
            }
        }
    }
    sum.zip_map(&count, |s, c| if c > 0.0 { s / c } else { 0.0 })
}

/// CGLS for `min_x ‖A x − b‖²`, starting at `x0 = 0`-shifted `x`. Works on
/// matrices as vectors; `forward` is `A`, `adjoint` is `Aᵀ`.
fn cgls<F, G>(forward: F, adjoint: G, b: &[Mat], mut x: Mat, max_iter: usize, rel_tol: f64) -> Mat
where
    F: Fn(&Mat) -> Vec<Mat>,
    G: Fn(&[Mat]) -> Mat,
{
    let mut r: Vec<Mat> = b.to_vec();
    if x.iter().any(|v| *v != 0.0) {
        for (ri, ai) in r.iter_mut().zip(forward(&x)) {
            *ri -= ai;
        }
    }
    let mut s = adjoint(&r);
    let mut p = s.clone();
    let mut gamma = frobenius_sq(&s);
    let gamma0 = gamma;
    if gamma0 == 0.0 {
        return x;
    }
    for _ in 0..max_iter {
        let q = forward(&p);
        let qq: f64 = q.iter().map(frobenius_sq).sum();
        if qq == 0.0 {
            break;
        }
        let alpha = gamma / qq;
        x += &p * alpha;
        for (ri, qi) in r.iter_mut().zip(&q) {
            *ri -= qi * alpha;
        }
        s = adjoint(&r);
        let gamma_new = frobenius_sq(&s);
        if gamma_new <= rel_tol * rel_tol * gamma0 {
            break;
        }
        p = &s + &p * (gamma_new / gamma);
        gamma = gamma_new;
    }
    x
}

/// Random section for the exactness experiments: `W` uniform off the
/// diagonal, rescaled to `‖W‖_F = 0.9`; `L` unit lower-triangular with
/// off-diagonal entries uniform in `±0.5/√n`.
pub fn random_section(context: Context, rng: &mut impl Rng) -> CausalState {
    let n = context.len();
    let mut w = Mat::from_fn(n, n, |i, j| if i == j { 0.0 } else { rng.random_range(-1.0..1.0) });
    let norm = frobenius_norm(&w);
    if norm > 0.0 {
        w *= 0.9 / norm;
    }
    let spread = 0.5 / libm::sqrt(n as f64);
    let l = Mat::from_fn(n, n, |i, j| match i.cmp(&j) {
        core::cmp::Ordering::Equal => 1.0,
        core::cmp::Ordering::Greater => rng.random_range(-spread..spread),
        core::cmp::Ordering::Less => 0.0,
    });
    CausalState::from_parts(context, w, l).expect("finite random section")
}

/// One row of the exactness suite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub n: usize,
    pub seed: u64,
    pub axiom: Axiom,
    pub error: f64,
    pub passed: bool,
}

/// Runs all four checks for one `(n, seed)`: a random section, nested
/// contexts `Z ⊂ V ⊂ U` of sizes `⌈n/2⌉` and `⌈3n/4⌉`, and a random cover
/// (parts of `⌈0.6n⌉`, at least three parts when `n >= 30`). Locality and
/// gluing share one gluing of the section's restrictions.
pub fn exactness_cell(n: usize, seed: u64) -> Result<Vec<CellRecord>> {
    let ground = Context::range(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((n as u64) << 32));
    let state = random_section(ground.clone(), &mut rng);

    let (v, z) = if n >= 3 {
        let mut ids: Vec<usize> = ground.ids().to_vec();
        ids.shuffle(&mut rng);
        let v_size = ((3 * n).div_ceil(4)).clamp(2, n - 1);
        let z_size = n.div_ceil(2).clamp(1, v_size - 1);
        let v_ids: Vec<usize> = ids[..v_size].to_vec();
        let z_ids: Vec<usize> = v_ids[..z_size].to_vec();
        (Context::from_unsorted(v_ids)?, Context::from_unsorted(z_ids)?)
    } else {
        (ground.clone(), ground.clone())
    };
    let min_parts = if n >= 30 { 3 } else { 1 };
    let cover = ContextCover::random(&ground, 0.6, min_parts, &mut rng);

    let identity = check_identity(&state);
    let transitivity = check_transitivity(&state, &v, &z)?;
    let locals = restrict_to_cover(&state, &cover)?;
    let glued = glue_sections(&locals, &cover, DEFAULT_EPS)?;
    let locality = AxiomReport::new(Axiom::Locality, section_distance(&state, &glued.state));

    Ok([identity, transitivity, locality, glued.report]
        .into_iter()
        .map(|r| CellRecord { n, seed, axiom: r.axiom, error: r.error, passed: r.passed })
        .collect())
}

/// Every `(n, seed)` cell in order.
pub fn run_exactness_suite(sizes: &[usize], seeds: &[u64]) -> Result<Vec<CellRecord>> {
    if sizes.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidConfig("sizes and seeds must be nonempty".into()));
    }
    let mut out = Vec::new();
    for &n in sizes {
        for &seed in seeds {
            out.extend(exactness_cell(n, seed)?);
        }
    }
    Ok(out)
}

/// Mean ± population std of the error and pass rate, per `(n, axiom)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxiomSummary {
    pub n: usize,
    pub axiom: Axiom,
    pub mean_error: f64,
    pub std_error: f64,
    pub pass_rate: f64,
    pub cells: usize,
}

pub fn summarize(records: &[CellRecord]) -> Vec<AxiomSummary> {
    let mut sizes: Vec<usize> = records.iter().map(|r| r.n).collect();
    sizes.sort_unstable();
    sizes.dedup();
    let mut out = Vec::new();
    for n in sizes {
        for axiom in Axiom::ALL {
            let errs: Vec<&CellRecord> = records.iter().filter(|r| r.n == n && r.axiom == axiom).collect();
            if errs.is_empty() {
                continue;
            }
            let values: Vec<f64> = errs.iter().map(|r| r.error).collect();
            let stats = crate::stats::MeanStd::of(&values);
            let passed = errs.iter().filter(|r| r.passed).count();
            out.push(AxiomSummary {
                n,
                axiom,
                mean_error: stats.mean,
                std_error: stats.std,
                pass_rate: passed as f64 / errs.len() as f64,
                cells: errs.len(),
            });
        }
    }
    out
}
