//! Error type shared by every module in the crate.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("zero vector: norm {norm:.3e} below threshold")]
    ZeroVector { norm: f64 },
    #[error("zero prefix: first {dim} coordinates have norm {norm:.3e}")]
    ZeroPrefix { dim: usize, norm: f64 },
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("bad dim {dim} for dimension {max}")]
    BadDim { dim: usize, max: usize },
    #[error("bad dims: {0}")]
    BadDims(String),
    #[error("empty input")]
    EmptyInput,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("empty batch")]
    BatchEmpty,
    #[error("expected {expected} negative batches, got {got}")]
    NegativesCountMismatch { expected: usize, got: usize },
    #[error("stage {stage} requires a {expected} text batch")]
    WrongBatchKind { stage: u8, expected: &'static str },
    #[error("token id {token} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { token: u32, vocab: usize },
    #[error("empty token sequence")]
    EmptySequence,
    #[error("sequence length {len} exceeds context length {context}")]
    ContextExceeded { len: usize, context: usize },
    #[error("patch grid {got_side}x{got_side}x{got_ch} does not match encoder {want_side}x{want_side}x{want_ch}")]
    GridMismatch {
        got_side: usize,
        got_ch: usize,
        want_side: usize,
        want_ch: usize,
    },
    #[error("bad length: {0}")]
    BadLength(String),
    #[error("cannot shrink from {from} to {to}")]
    ShrinkNotAllowed { from: usize, to: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("bad step {step} of {total}")]
    BadStep { step: u64, total: u64 },
    #[error("bad layer {layer} for {num_layers} layers")]
    BadLayer { layer: usize, num_layers: usize },
    #[error("bad parameters: {0}")]
    BadParams(String),
    #[error("unknown concept id {0}")]
    BadConcept(usize),
    #[error("dataset {0} has no records")]
    DatasetExhausted(String),
    #[error("non-finite loss at step {step}: {diagnostic}")]
    NonFiniteLoss { step: u64, diagnostic: String },
    #[error("empty evaluation task")]
    EmptyTask,
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error("bad config at {path} line {line}: {message}")]
    BadConfig {
        path: String,
        line: usize,
        message: String,
    },
    #[error("bad record in {file} line {line}: {message}")]
    BadRecord {
        file: String,
        line: usize,
        message: String,
    },
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
