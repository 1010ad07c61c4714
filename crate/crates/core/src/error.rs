//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Kernel evaluated at (numerically) coincident points.
    #[error("coincident evaluation points: target {target:?} and source {source_point:?} (pair {pair:?})")]
    CoincidentPoints {
        target: [f64; 3],
        source_point: [f64; 3],
        pair: Option<(usize, usize)>,
    },

    /// A configuration value violates its documented range.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Octree construction could not satisfy the leaf bound.
    #[error(
        "octree depth cap {cap} reached with {count} members in leaf {index:?} (s_max = {s_max}); \
         input points are too clustered"
    )]
    OverfullLeaf {
        cap: u32,
        index: (u32, u32, u32),
        count: usize,
        s_max: usize,
    },

    /// A matrix expected to carry geometric information is numerically rank-zero.
    #[error("degenerate operator: {0}")]
    DegenerateOperator(String),

    /// Operator shapes do not conform.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Mesh input is malformed or geometrically invalid.
    #[error("mesh error: {0}")]
    Mesh(String),

    /// Boundary-condition input is malformed or inconsistent with the request.
    #[error("boundary condition error: {0}")]
    BoundaryCondition(String),

    /// File input could not be read or parsed.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// An input vector has the wrong length for the operator it is applied to.
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    /// Dense factorization failed (singular system).
    #[error("factorization failed: {0}")]
    Factorization(String),

    /// A size guard protecting O(N^2)/O(N^3) reference paths was exceeded.
    #[error("oracle guard exceeded: {0}")]
    OracleGuard(String),
}
