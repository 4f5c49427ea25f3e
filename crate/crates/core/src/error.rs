use thiserror::Error;

/// Errors produced by the packing environment, generators and planner.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("footprint out of bounds: flb ({x},{y}) with footprint {w}x{l}")]
    OutOfBounds { x: u32, y: u32, w: u32, l: u32 },

    #[error("placement error: {0}")]
    Placement(String),

    #[error("illegal action: {0}")]
    IllegalAction(String),

    #[error("state error: {0}")]
    State(String),

    #[error("invalid sequence: {0}")]
    InvalidSequence(String),

    #[error("no feasible action")]
    NoAction,

    #[error("unsupported transform: {0}")]
    UnsupportedTransform(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("training divergence: {0}")]
    Divergence(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
