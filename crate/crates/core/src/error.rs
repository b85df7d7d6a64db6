use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid size incompatible with group: expected {expected}x{expected}, got {rows}x{cols}")]
    GridMismatch {
        expected: usize,
        rows: usize,
        cols: usize,
    },

    #[error("invalid group: {0}")]
    InvalidGroup(String),

    #[error("unsupported IDX type: magic {0:#010x}")]
    UnsupportedIdx(u32),

    #[error("IDX length mismatch: header implies {expected} bytes, found {actual}")]
    IdxLength { expected: usize, actual: usize },

    #[error("dataset error: {0}")]
    Data(String),

    #[error("label class count mismatch: {0}")]
    ClassMismatch(String),

    #[error("non-finite input")]
    NonFiniteInput,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("forward cache does not match network: {0}")]
    CacheMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("degenerate base accuracy")]
    DegenerateAccuracy,

    #[error("step size too large for ‖ε‖²: alpha * ‖ε‖² = {0} (must be < 2)")]
    UnstableStep(f64),

    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
