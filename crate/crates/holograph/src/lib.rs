//! File formats, the HTTP oracle, benchmark orchestration and report
//! rendering on top of `holograph-core`.

pub mod bench;
pub mod io;
pub mod llm;
pub mod report;
pub mod sachs;

pub use holograph_core as core;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("format error: {0}")]
    Format(String),
    #[error("plot error: {0}")]
    Plot(String),
    #[error(transparent)]
    Core(#[from] holograph_core::Error),
}

pub type CliResult<T> = Result<T, CliError>;
