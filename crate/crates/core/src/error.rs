use thiserror::Error;

use crate::types::{CoreId, LineAddr};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`")]
    InvalidValue { key: String, value: String },
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("configuration invariant violated: {0}")]
    Invariant(String),
}

/// A transition was invoked outside its contract, or an unexpected message
/// arrived. In the checker these surface as structural violations.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("{core}: operation requires normal execution mode")]
    NotNormalMode { core: CoreId },
    #[error("{core}: access while another access is outstanding")]
    AccessOutstanding { core: CoreId },
    #[error("access to {addr:?} spans past the end of the line")]
    LineCrossing { addr: LineAddr },
    #[error("{core}: evicting invalid line {addr:?}")]
    EvictInvalid { core: CoreId, addr: LineAddr },
    #[error("merge of fetched data into a line that is not partially invalid")]
    MergeNotPartial,
    #[error("{core}: unmatched {what} for {addr:?}")]
    Unmatched { core: CoreId, what: &'static str, addr: LineAddr },
    #[error("{core}: unexpected {what}")]
    Unexpected { core: CoreId, what: &'static str },
    #[error("malformed write-back from {core}: {why}")]
    MalformedWriteBack { core: CoreId, why: &'static str },
    #[error("{core}: write-back counter overflow ({received} received, {announced} announced)")]
    CountMismatch { core: CoreId, received: u32, announced: u32 },
    #[error("line state invariant broken at {addr:?}: {why}")]
    LineInvariant { addr: LineAddr, why: &'static str },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("payload truncated")]
    Truncated,
    #[error("unknown tag {0:#04x}")]
    UnknownTag(u8),
    #[error("trailing bytes after payload")]
    Trailing,
    #[error("field out of range: {0}")]
    OutOfRange(&'static str),
}
