//! Command-line front end: configuration, plan artifacts, population runs
//! and CSV reports.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifact;
pub mod commands;
pub mod config;
pub mod report;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl From<robart_core::Error> for CliError {
    fn from(e: robart_core::Error) -> Self {
        match e {
            robart_core::Error::InvalidInput(m) => CliError::Config(m),
            other => CliError::Solver(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
