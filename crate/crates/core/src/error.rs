use std::io;

use thiserror::Error;

/// Error categories surfaced by every module; the CLI maps each to an exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("parameter error: {0}")]
    Param(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("tape error: {0}")]
    Tape(String),
    #[error("state error: {0}")]
    State(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("version error: expected {expected}, found {found}")]
    Version { expected: u32, found: u32 },
    #[error("dependency error: {0}")]
    Dependency(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
