use std::io;

use thiserror::Error;

/// Errors produced by the index library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("inconsistent dimension: record {record} has {found}, expected {expected}")]
    InconsistentDimension {
        record: usize,
        expected: usize,
        found: usize,
    },

    #[error("truncated input: {0}")]
    Truncated(String),

    #[error("invalid dimension {0}")]
    InvalidDimension(i64),

    #[error("non-finite value in row {row}, component {component}")]
    NonFinite { row: usize, component: usize },

    #[error("negative id {value} in row {row}")]
    NegativeId { row: usize, value: i32 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("insufficient points: need more than {k} points, have {n}")]
    InsufficientPoints { n: usize, k: usize },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("not an AQR index")]
    BadMagic,

    #[error("unsupported index format version {0}")]
    UnsupportedVersion(u32),

    #[error("index checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("corrupt index: {0}")]
    Corrupt(String),

    #[error("duplicate node id {0}")]
    DuplicateId(u32),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown preset {0:?}")]
    UnknownPreset(String),

    #[error("unknown sweep axis {0:?}")]
    UnknownAxis(String),

    #[error("misaligned inputs: {0}")]
    Misaligned(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
