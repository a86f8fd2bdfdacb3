//! Sachs adjacency format: a CSV with a header row of the 11 variable
//! names followed by 11 rows of 0/1 entries, row `i` column `j` meaning
//! `i -> j`. An optional leading name column on each row is accepted.

use std::path::Path;

use holograph_core::generators::GroundTruth;
use holograph_core::BinaryGraph;

use crate::{CliError, CliResult};

pub const SACHS_VARIABLES: usize = 11;

fn format_err(msg: impl Into<String>) -> CliError {
    CliError::Format(msg.into())
}

pub fn parse_sachs(text: &str) -> CliResult<(GroundTruth, Vec<String>)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut rows: Vec<Vec<String>> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| format_err(e.to_string()))?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        rows.push(rec.iter().map(str::to_string).collect());
    }
    let Some((header, body)) = rows.split_first() else {
        return Err(format_err("empty adjacency file"));
    };
    let mut names: Vec<String> = header.clone();
    if names.first().is_some_and(|s| s.is_empty()) {
        names.remove(0);
    }
    if names.len() != SACHS_VARIABLES {
        return Err(format_err(format!("expected {SACHS_VARIABLES} variables, header has {}", names.len())));
    }
    if body.len() != SACHS_VARIABLES {
        return Err(format_err(format!("expected {SACHS_VARIABLES} adjacency rows, found {}", body.len())));
    }
    let mut edges = Vec::new();
    for (i, row) in body.iter().enumerate() {
        let cells = match row.len() {
            n if n == SACHS_VARIABLES => &row[..],
            n if n == SACHS_VARIABLES + 1 => &row[1..],
            n => return Err(format_err(format!("row {} has {n} fields", i + 1))),
        };
        for (j, cell) in cells.iter().enumerate() {
            match cell.as_str() {
                "0" => {}
                "1" => {
                    if i == j {
                        return Err(format_err(format!("self loop on {}", names[i])));
                    }
                    edges.push((i, j));
                }
                other => return Err(format_err(format!("entry ({}, {}) must be 0 or 1, got '{other}'", i + 1, j + 1))),
            }
        }
    }
    let graph = BinaryGraph::from_edges(SACHS_VARIABLES, &edges).map_err(|e| format_err(e.to_string()))?;
    if !graph.is_acyclic() {
        return Err(format_err("adjacency contains a directed cycle"));
    }
    let truth = GroundTruth::new(graph, Vec::new()).map_err(|e| format_err(e.to_string()))?;
    Ok((truth, names))
}

pub fn load_sachs(path: &Path) -> CliResult<(GroundTruth, Vec<String>)> {
    parse_sachs(&std::fs::read_to_string(path)?)
}

pub fn render_sachs(graph: &BinaryGraph, names: &[String]) -> CliResult<String> {
    if names.len() != graph.n() {
        return Err(format_err("one name per variable required"));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(names)?;
    for i in 0..graph.n() {
        w.write_record((0..graph.n()).map(|j| if graph.has_edge(i, j) { "1" } else { "0" }))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_sachs(path: &Path, graph: &BinaryGraph, names: &[String]) -> CliResult<()> {
    std::fs::write(path, render_sachs(graph, names)?)?;
    Ok(())
}
