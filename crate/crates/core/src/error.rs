use thiserror::Error;

/// Errors raised by the game model, the solvers and the file formats.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("stops remaining {l} outside 1..={max}")]
    InvalidStops { l: u32, max: u32 },

    #[error("invalid value for `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("invalid probability mass function: {0}")]
    InvalidPmf(String),

    #[error("alphabet size mismatch: {left} vs {right}")]
    AlphabetMismatch { left: usize, right: usize },

    #[error("observation symbol {symbol} outside alphabet of size {alphabet}")]
    SymbolOutOfRange { symbol: usize, alphabet: usize },

    #[error("belief update is degenerate: observation has zero probability under the model")]
    DegenerateBelief,

    #[error("no observation is emitted in the terminal state")]
    TerminalObservation,

    #[error("state {0} is not valid here")]
    InvalidState(&'static str),

    #[error("strategy mismatch: {0}")]
    StrategyMismatch(String),

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("missing context for baseline decision: {0}")]
    MissingContext(&'static str),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
