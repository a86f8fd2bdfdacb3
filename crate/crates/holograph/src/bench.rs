//! Runs an [`ExperimentConfig`] over its seeds and persists the outputs.
//!
//! Layout under the output directory, for a record labelled `L`:
//! `L.json` (the record), `L.timings.json` (wall-clock per seed),
//! `trajectories/L-seed<S>.jsonl`, `answers/L-seed<S>.json` and, for LLM
//! oracles, `audit/L-seed<S>.jsonl`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use holograph_core::experiment::{run_seed, ExperimentConfig, ExperimentRecord, OracleSpec, SeedResult};
use holograph_core::generators::GroundTruth;
use holograph_core::query::{Oracle, OracleAnswer, QueryCandidate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::io::{write_json, TrajectoryWriter};
use crate::llm::LlmOracle;
use crate::sachs::load_sachs;
use crate::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedTiming {
    pub seed: u64,
    pub runtime_secs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOutput {
    pub record: ExperimentRecord,
    pub timings: Vec<SeedTiming>,
    pub record_path: PathBuf,
}

#[derive(Serialize)]
struct AnswerLog<'a> {
    query: &'a QueryCandidate,
    answer: &'a OracleAnswer,
}

pub fn record_label(config: &ExperimentConfig) -> String {
    format!("{}-{}", config.dataset.label(), config.ablation.name())
}

pub fn trajectory_path(out_dir: &Path, label: &str, seed: u64) -> PathBuf {
    out_dir.join("trajectories").join(format!("{label}-seed{seed}.jsonl"))
}

/// Ground truth and prompt names shared by every seed, when the dataset
/// is loaded rather than generated.
enum Truths {
    Fixed(GroundTruth, Vec<String>),
    Generated,
}

fn truths(config: &ExperimentConfig) -> CliResult<Truths> {
    match &config.dataset {
        holograph_core::experiment::DatasetSpec::Sachs { path } => {
            let (truth, names) = load_sachs(Path::new(path))?;
            Ok(Truths::Fixed(truth, names))
        }
        _ => Ok(Truths::Generated),
    }
}

fn synthetic_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("X{i}")).collect()
}

fn run_one(
    config: &ExperimentConfig,
    seed: u64,
    truth: &GroundTruth,
    names: &[String],
    out_dir: &Path,
    label: &str,
) -> CliResult<SeedResult> {
    let mut sim = config.simulated_oracle(seed, truth)?;
    let mut llm = match (&config.oracle, config.uses_oracle()) {
        (OracleSpec::Llm(spec), true) => {
            let model = config.llm_model().unwrap_or(&spec.model).to_string();
            let audit = out_dir.join("audit").join(format!("{label}-seed{seed}.jsonl"));
            Some(LlmOracle::new(spec, &model, names.to_vec()).with_audit(&audit)?)
        }
        _ => None,
    };
    let oracle: Option<&mut dyn Oracle> = match (sim.as_mut(), llm.as_mut()) {
        (Some(s), _) => Some(s),
        (None, Some(l)) => Some(l),
        (None, None) => None,
    };

    let mut writer = TrajectoryWriter::create(&trajectory_path(out_dir, label, seed))?;
    let mut write_error: Option<CliError> = None;
    let mut observer = |_: usize, step: &holograph_core::objective::LossBreakdown| {
        if write_error.is_none() {
            if let Err(e) = writer.push(step) {
                write_error = Some(e);
            }
        }
    };
    let outcome = run_seed(config, seed, truth, oracle, &mut observer);
    if let Some(e) = write_error {
        return Err(e);
    }
    writer.finish()?;
    match outcome {
        Ok(run) => {
            let log: Vec<AnswerLog<'_>> =
                run.answers.iter().map(|(query, answer)| AnswerLog { query, answer }).collect();
            write_json(&out_dir.join("answers").join(format!("{label}-seed{seed}.json")), &log)?;
            Ok(run.result)
        }
        Err(e) => Ok(SeedResult::failed(seed, truth.graph.edge_count(), &e)),
    }
}

fn seed_result(
    config: &ExperimentConfig,
    seed: u64,
    fixed: Option<(&GroundTruth, &[String])>,
    out_dir: &Path,
    label: &str,
) -> (SeedResult, SeedTiming) {
    let start = Instant::now();
    let result = match fixed {
        Some((truth, names)) => run_one(config, seed, truth, names, out_dir, label)
            .unwrap_or_else(|e| SeedResult::failed(seed, truth.graph.edge_count(), &e)),
        None => match config.dataset.generate(seed) {
            Ok(truth) => {
                let names = synthetic_names(truth.graph.n());
                run_one(config, seed, &truth, &names, out_dir, label)
                    .unwrap_or_else(|e| SeedResult::failed(seed, truth.graph.edge_count(), &e))
            }
            Err(e) => SeedResult::failed(seed, 0, &e),
        },
    };
    (result, SeedTiming { seed, runtime_secs: start.elapsed().as_secs_f64() })
}

/// Runs every seed (in parallel unless an LLM oracle is in use, whose
/// requests and budget stay serialized) and writes the record, timings,
/// trajectories and answer logs. Per-seed failures are recorded, not
/// raised.
pub fn run_bench(config: &ExperimentConfig, out_dir: &Path) -> CliResult<BenchOutput> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let label = record_label(config);
    let truths = truths(config)?;
    let fixed = match &truths {
        Truths::Fixed(t, names) => Some((t, names.as_slice())),
        Truths::Generated => None,
    };
    let serial = matches!(config.oracle, OracleSpec::Llm(_)) && config.uses_oracle();
    let per_seed: Vec<(SeedResult, SeedTiming)> = if serial {
        config.seeds.iter().map(|&s| seed_result(config, s, fixed, out_dir, &label)).collect()
    } else {
        config.seeds.par_iter().map(|&s| seed_result(config, s, fixed, out_dir, &label)).collect()
    };
    let (seeds, timings): (Vec<SeedResult>, Vec<SeedTiming>) = per_seed.into_iter().unzip();
    let record = ExperimentRecord::new(config.clone(), seeds);
    let record_path = out_dir.join(format!("{label}.json"));
    write_json(&record_path, &record)?;
    write_json(&out_dir.join(format!("{label}.timings.json")), &timings)?;
    Ok(BenchOutput { record, timings, record_path })
}
