//! Aggregate tables, JSON summary and SVG loss plots from saved records.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use holograph_core::experiment::{aggregate, Aggregate, ExperimentRecord};
use holograph_core::objective::LossBreakdown;
use holograph_core::stats::MeanStd;
use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::trajectory_path;
use crate::io::{read_json, read_trajectory, write_json};
use crate::{CliError, CliResult};

/// Per-seed loss trajectories of one record, keyed by seed.
pub type Trajectories = BTreeMap<u64, Vec<LossBreakdown>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub label: String,
    pub dataset: String,
    pub ablation: String,
    pub seeds: usize,
    pub aggregate: Aggregate,
    /// Stored aggregate agrees with one recomputed from the seeds (1e−12).
    pub consistent: bool,
    pub plot: Option<String>,
}

fn close(a: Option<MeanStd>, b: Option<MeanStd>) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(a), Some(b)) => (a.mean - b.mean).abs() <= 1e-12 && (a.std - b.std).abs() <= 1e-12,
        _ => false,
    }
}

pub fn aggregate_consistent(record: &ExperimentRecord) -> bool {
    let again = aggregate(&record.seeds);
    let stored = &record.aggregate;
    again.completed_seeds == stored.completed_seeds
        && close(again.shd, stored.shd)
        && close(again.f1, stored.f1)
        && close(again.sid, stored.sid)
        && close(again.final_total_loss, stored.final_total_loss)
}

/// Every top-level `*.json` file in `dir` that parses as a record, sorted
/// by file name. Timing sidecars are skipped.
pub fn load_records(dir: &Path) -> CliResult<Vec<(PathBuf, ExperimentRecord)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension().is_some_and(|e| e == "json")
                && !p.to_string_lossy().ends_with(".timings.json")
        })
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        match read_json::<ExperimentRecord>(&p) {
            Ok(r) => out.push((p, r)),
            Err(CliError::Format(msg)) => eprintln!("skipping {}: {msg}", p.display()),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Trajectory files written next to a record, for the seeds it lists.
pub fn load_trajectories(dir: &Path, record: &ExperimentRecord) -> CliResult<Trajectories> {
    let mut out = Trajectories::new();
    for s in &record.seeds {
        let p = trajectory_path(dir, &record.label, s.seed);
        if p.is_file() {
            let steps = read_trajectory(&p)?;
            if !steps.is_empty() {
                out.insert(s.seed, steps);
            }
        }
    }
    Ok(out)
}

fn cell(m: Option<MeanStd>) -> [String; 2] {
    match m {
        Some(m) => [m.mean.to_string(), m.std.to_string()],
        None => [String::new(), String::new()],
    }
}

pub fn aggregate_csv(records: &[ExperimentRecord]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "label",
        "dataset",
        "ablation",
        "seeds",
        "completed_seeds",
        "shd_mean",
        "shd_std",
        "f1_mean",
        "f1_std",
        "sid_mean",
        "sid_std",
        "final_loss_mean",
        "final_loss_std",
    ])?;
    for r in records {
        let a = &r.aggregate;
        let mut row = vec![
            r.label.clone(),
            r.config.dataset.label(),
            r.config.ablation.name().to_string(),
            r.seeds.len().to_string(),
            a.completed_seeds.to_string(),
        ];
        for m in [a.shd, a.f1, a.sid, a.final_total_loss] {
            row.extend(cell(m));
        }
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

const LOG_FLOOR: f64 = 1e-12;

/// Total loss against step, one line per seed, log-scaled.
pub fn loss_plot_svg(label: &str, trajectories: &Trajectories) -> CliResult<String> {
    let plot_err = |e: &dyn std::fmt::Display| CliError::Plot(e.to_string());
    let steps = trajectories.values().map(Vec::len).max().unwrap_or(0).max(2);
    let values = trajectories.values().flatten().map(|b| b.total.max(LOG_FLOOR));
    let (lo, hi) = values.fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (LOG_FLOOR, 1.0) };

    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (720, 440)).into_drawing_area();
        root.fill(&WHITE).map_err(|e| plot_err(&e))?;
        let mut chart = ChartBuilder::on(&root)
            .caption(format!("{label}: total loss"), ("sans-serif", 18))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(64)
            .build_cartesian_2d(0f64..(steps - 1) as f64, (lo * 0.8..hi * 1.25).log_scale())
            .map_err(|e| plot_err(&e))?;
        chart
            .configure_mesh()
            .x_desc("step")
            .y_desc("total loss")
            .y_label_formatter(&|v| format!("{v:.1e}"))
            .draw()
            .map_err(|e| plot_err(&e))?;
        for (k, (seed, traj)) in trajectories.iter().enumerate() {
            let color = Palette99::pick(k).to_rgba();
            chart
                .draw_series(LineSeries::new(
                    traj.iter().enumerate().map(|(s, b)| (s as f64, b.total.max(LOG_FLOOR))),
                    color.stroke_width(2),
                ))
                .map_err(|e| plot_err(&e))?
                .label(format!("seed {seed}"))
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(|e| plot_err(&e))?;
        root.present().map_err(|e| plot_err(&e))?;
    }
    Ok(svg)
}

/// Writes `aggregate.csv`, `summary.json` and `plots/<label>.svg` for every
/// record that has at least one trajectory.
pub fn report(records: &[(ExperimentRecord, Trajectories)], out_dir: &Path) -> CliResult<Vec<SummaryEntry>> {
    if records.is_empty() {
        return Err(CliError::Format("no experiment records to report".into()));
    }
    fs::create_dir_all(out_dir)?;
    let plain: Vec<ExperimentRecord> = records.iter().map(|(r, _)| r.clone()).collect();
    fs::write(out_dir.join("aggregate.csv"), aggregate_csv(&plain)?)?;

    let mut summary = Vec::new();
    for (r, traj) in records {
        let plot = if traj.is_empty() {
            None
        } else {
            let dir = out_dir.join("plots");
            fs::create_dir_all(&dir)?;
            let name = format!("{}.svg", r.label);
            fs::write(dir.join(&name), loss_plot_svg(&r.label, traj)?)?;
            Some(format!("plots/{name}"))
        };
        summary.push(SummaryEntry {
            label: r.label.clone(),
            dataset: r.config.dataset.label(),
            ablation: r.config.ablation.name().to_string(),
            seeds: r.seeds.len(),
            aggregate: r.aggregate.clone(),
            consistent: aggregate_consistent(r),
            plot,
        });
    }
    write_json(&out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}
