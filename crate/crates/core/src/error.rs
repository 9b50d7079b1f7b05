//! Library-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Uniform rejection sampling on a custom domain made no progress: the
    /// indicator accepted nothing over a long window of proposals.
    #[error("domain appears degenerate: {rejections} consecutive rejections while sampling the bounding box (acceptance rate below {min_rate:e})")]
    DegenerateDomain { rejections: u64, min_rate: f64 },

    /// Exact orthonormalization was requested on a domain without a moment
    /// oracle (e.g. a custom indicator-only domain).
    #[error("domain {0:?} has no exact moment oracle; use discrete orthonormalization instead")]
    NoMomentOracle(String),

    /// A point-wise operation requiring domain membership was handed a point
    /// outside the domain.
    #[error("point {0:?} is outside the domain")]
    OutsideDomain(Vec<f64>),

    /// The moment matrix was numerically singular at the given basis size.
    #[error("moment matrix is numerically singular at basis size {0}; the space is not determining on this domain at this degree")]
    MomentMatrixSingular(usize),

    /// A discrete Gram matrix had numerical rank below the space dimension.
    #[error("discrete Gram matrix has numerical rank {rank} < {n}; the point set does not determine the space")]
    RankDeficient { rank: usize, n: usize },

    /// The empirical conditioning search exceeded its sample-size cap.
    #[error("empirical conditioning search exceeded {cap} points without reaching the target condition number (last kappa = {last_kappa:.3e})")]
    EmpiricalMDiverged { cap: usize, last_kappa: f64 },

    /// A level schedule failed validation.
    #[error("invalid level schedule: {0}")]
    ScheduleViolation(String),

    /// A failure inside one level of a multilevel/hierarchical run.
    #[error("level {level}: {source}")]
    AtLevel {
        level: usize,
        #[source]
        source: Box<Error>,
    },

    /// Resampling retries were exhausted without achieving a well-conditioned
    /// Gram matrix.
    #[error("redraw budget exhausted; last Gram deviation was {0:.3e}")]
    RedrawsExhausted(f64),

    /// An operation needed diagnostics (e.g. cached Gram data) that the input
    /// value was built without.
    #[error("missing diagnostics: {0}")]
    MissingDiagnostics(String),

    /// Two values built over different bases/spaces were combined.
    #[error("basis mismatch: {0}")]
    BasisMismatch(String),

    /// A parameter was outside its documented range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Serialized data could not be decoded.
    #[error("deserialization failed: {0}")]
    Deserialize(String),

    /// An integer quantity overflowed its representable range.
    #[error("integer overflow computing {0}")]
    Overflow(&'static str),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
