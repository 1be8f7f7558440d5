//! Batch front end: build a benchmark from a run specification, run the requested pipeline
//! and write JSON and CSV artifacts.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;

pub mod run;
pub mod spec;

pub use run::{run, Outcome};
pub use spec::{Command, RunSpec};

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("writing {}: {message}", path.display())]
    Output { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] bounded_idapbc::Error),
}

impl AppError {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
