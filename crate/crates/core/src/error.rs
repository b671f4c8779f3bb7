use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A per-slab least-squares system does not have full column rank.
    #[error("rank-deficient system in slab {slab}: {observed} observed rows for rank {rank}")]
    RankDeficient {
        slab: usize,
        observed: usize,
        rank: usize,
    },

    #[error("mask floor of {floor} observed entries is infeasible for slabs of {slab_size} entries")]
    InfeasibleMaskFloor { floor: usize, slab_size: usize },

    #[error("ground truth has zero Frobenius norm")]
    ZeroNorm,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::ShapeMismatch(msg.into()))
}
