use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by configuration, trace handling, and simulation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("config line {line}: {msg}")]
    ConfigSyntax { line: usize, msg: String },

    #[error("invalid size literal `{0}`")]
    SizeLiteral(String),

    #[error("trace line {line}: {msg}")]
    TraceSyntax { line: usize, msg: String },

    #[error(
        "request #{seq}: address {addr:#x} (+{size} B) is beyond the {limit:#x}-byte host space"
    )]
    AddressOutOfRange {
        seq: u64,
        addr: u64,
        size: u32,
        limit: u64,
    },

    #[error("request #{seq}: {size} B at {addr:#x} crosses a {block}-byte block boundary")]
    CrossesBlock {
        seq: u64,
        addr: u64,
        size: u32,
        block: u64,
    },

    #[error("request #{seq}: size must be positive")]
    ZeroSize { seq: u64 },

    #[error("request #{seq}: host page {page} lies outside fast memory, AllDRAM needs fast capacity covering the footprint")]
    AllDramInfeasible { seq: u64, page: u64 },

    #[error("workload: {0}")]
    Workload(String),

    #[error("metadata geometry: {0}")]
    Geometry(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Stream(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
