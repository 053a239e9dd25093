use thiserror::Error;

/// Errors produced by the sparse kernels, model builders and solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: left is {left}, right is {right}")]
    DimensionMismatch {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("invalid argument `{arg}`: {reason}")]
    InvalidArgument { arg: &'static str, reason: String },

    #[error("block ({row}, {col}) has {got} entries, expected {expected}")]
    BlockShape {
        row: usize,
        col: usize,
        got: usize,
        expected: usize,
    },

    #[error("matrix is not symmetric: |a_ij - a_ji| = {deviation:e} at ({row}, {col})")]
    NotSymmetric {
        row: usize,
        col: usize,
        deviation: f64,
    },

    #[error("matrix is not positive definite (smallest singular value estimate {a:e}); add a regularization mu > 0")]
    NotPositiveDefinite { a: f64 },

    #[error("edge ({i}, {j}) carries an all-zero coupling block")]
    ZeroEdgeBlock { i: usize, j: usize },

    #[error("system is not stable enough for truncation: ||A^{s}||_2 = {norm:e} > eta = {eta:e}")]
    NotStable { s: usize, norm: f64, eta: f64 },

    #[error("explicit time step {dt} exceeds the stability bound {bound}")]
    UnstableTimeStep { dt: f64, bound: f64 },

    #[error("matrix is rank deficient ({context}); use a regularization mu > 0")]
    RankDeficient { context: String },

    #[error("missing signal for subsystem {0:?}")]
    MissingSignals(Vec<usize>),

    #[error("{0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(arg: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            arg,
            reason: reason.into(),
        }
    }
}
