//! JSON, JSON-lines and CSV persistence.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use holograph_core::objective::LossBreakdown;
use holograph_core::sheaf::{summarize, CellRecord};
use holograph_core::CausalState;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::{CliError, CliResult};

/// Lines buffered by [`TrajectoryWriter`] before each flush.
pub const FLUSH_EVERY: usize = 100;

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))
}

pub fn write_state(path: &Path, state: &CausalState) -> CliResult<()> {
    write_json(path, state)
}

pub fn read_state(path: &Path) -> CliResult<CausalState> {
    read_json(path)
}

pub fn state_to_string(state: &CausalState) -> CliResult<String> {
    Ok(serde_json::to_string(state)?)
}

pub fn state_from_str(text: &str) -> CliResult<CausalState> {
    serde_json::from_str(text).map_err(|e| CliError::Format(e.to_string()))
}

/// One `LossBreakdown` per line, flushed every [`FLUSH_EVERY`] lines and on
/// [`finish`](Self::finish).
pub struct TrajectoryWriter<W: Write> {
    out: W,
    pending: usize,
    written: usize,
}

impl TrajectoryWriter<BufWriter<File>> {
    pub fn create(path: &Path) -> CliResult<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        Ok(TrajectoryWriter::new(BufWriter::new(File::create(path)?)))
    }
}

impl<W: Write> TrajectoryWriter<W> {
    pub fn new(out: W) -> Self {
        TrajectoryWriter { out, pending: 0, written: 0 }
    }

    pub fn push(&mut self, step: &LossBreakdown) -> CliResult<()> {
        serde_json::to_writer(&mut self.out, step)?;
        self.out.write_all(b"\n")?;
        self.pending += 1;
        self.written += 1;
        if self.pending >= FLUSH_EVERY {
            self.out.flush()?;
            self.pending = 0;
        }
        Ok(())
    }

    pub fn written(&self) -> usize {
        self.written
    }

    pub fn finish(mut self) -> CliResult<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

pub fn read_trajectory(path: &Path) -> CliResult<Vec<LossBreakdown>> {
    let f = BufReader::new(File::open(path)?);
    let mut steps = Vec::new();
    for (k, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        steps.push(
            serde_json::from_str(&line)
                .map_err(|e| CliError::Format(format!("{}:{}: {e}", path.display(), k + 1)))?,
        );
    }
    Ok(steps)
}

/// Exactness-suite output: one JSON line per cell, plus the per-(n, axiom)
/// summary table as CSV.
pub fn write_suite(dir: &Path, records: &[CellRecord]) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    let mut jsonl = BufWriter::new(File::create(dir.join("sheaf_cells.jsonl"))?);
    for r in records {
        serde_json::to_writer(&mut jsonl, r)?;
        jsonl.write_all(b"\n")?;
    }
    jsonl.flush()?;

    let mut csv = csv::Writer::from_path(dir.join("sheaf_summary.csv"))?;
    csv.write_record(["n", "axiom", "mean_error", "std_error", "pass_rate", "cells"])?;
    for s in summarize(records) {
        csv.write_record([
            s.n.to_string(),
            s.axiom.name().to_string(),
            format!("{:e}", s.mean_error),
            format!("{:e}", s.std_error),
            s.pass_rate.to_string(),
            s.cells.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

pub fn read_suite_cells(path: &Path) -> CliResult<Vec<CellRecord>> {
    let f = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line).map_err(|e| CliError::Format(e.to_string()))?);
        }
    }
    Ok(out)
}
