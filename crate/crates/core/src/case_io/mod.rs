//! Readers and writers for case files and every persisted artifact.

mod archive;
mod matpower;

pub use archive::{read_archive, write_archive, ArchiveReader, ArchiveWriter, Snapshot, Timestamp};
pub use matpower::{parse_case, parse_case_with, ParseOptions, ParsedCase};

use thiserror::Error;

use crate::grid::GridError;

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("syntax error at line {line}, column {col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("semantic error: {0}")]
    Semantic(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("malformed record {index}: {msg}")]
    MalformedRecord { index: usize, msg: String },
    #[error("timestamp of record {index} does not increase")]
    NonMonotoneTimestamp { index: usize },
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Cases bundled with the crate.
pub const BUILTIN_CASES: &[&str] = &["case30", "case118"];

pub fn builtin_case_text(name: &str) -> Option<&'static str> {
    match name {
        "case30" => Some(include_str!("../../data/case30.m")),
        "case118" => Some(include_str!("../../data/case118.m")),
        _ => None,
    }
}

/// Parses a bundled case by name.
pub fn load_builtin(name: &str) -> Result<ParsedCase, CaseError> {
    let text = builtin_case_text(name)
        .ok_or_else(|| CaseError::Semantic(format!("unknown built-in case {name:?}")))?;
    parse_case(text)
}

/// Reads a case file, or a bundled case when `path` names one.
pub fn load_case(path: &str) -> Result<ParsedCase, CaseError> {
    if builtin_case_text(path).is_some() {
        return load_builtin(path);
    }
    parse_case(&std::fs::read_to_string(path)?)
}
