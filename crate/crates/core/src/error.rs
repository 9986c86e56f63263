//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Failure modes surfaced by the simulator.
///
/// Numerical routines return structured errors instead of panicking so the
/// experiment harness can report which trial and which stage failed.
#[derive(Debug, Error)]
pub enum Error {
    /// A matrix expected to have full column rank was numerically rank
    /// deficient. `column` is the zero-based column at which the
    /// factorization broke down.
    #[error("rank-deficient matrix: negligible pivot at column {column}")]
    RankDeficient { column: usize },

    /// A least-squares solve was requested with fewer rows than columns.
    #[error("underdetermined system: {rows} rows < {cols} columns")]
    Underdetermined { rows: usize, cols: usize },

    /// Operands have incompatible shapes. `context` names the operation.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    /// A routine that requires a symmetric matrix received one whose
    /// asymmetry exceeds tolerance.
    #[error("matrix is not symmetric: max |A - A^T| entry {defect:e}")]
    NotSymmetric { defect: f64 },

    /// The power-method iterate lost rank during initialization, so the
    /// spectral estimate cannot span the requested subspace.
    #[error("initialization iterate lost rank: negligible pivot at column {column}")]
    InitRankCollapse { column: usize },

    /// The requested subspace rank is impossible for the given dimensions.
    #[error("invalid rank {r} for ambient dimension {d} and {t} tasks")]
    InvalidRank { r: usize, d: usize, t: usize },

    /// A routine that requires orthonormal columns received a matrix whose
    /// Gram defect exceeds tolerance.
    #[error("matrix is not orthonormal: max |M^T M - I| entry {defect:e}")]
    NotOrthonormal { defect: f64 },

    /// A numeric kernel received NaN or infinite entries.
    #[error("non-finite entries passed to {context}")]
    NonFinite { context: &'static str },

    /// Sample splitting was requested with a per-task row count that is not
    /// a multiple of the block count.
    #[error("cannot split {n} samples evenly: need a multiple of {required_multiple}")]
    SplitSize { n: usize, required_multiple: usize },

    /// Erdos-Renyi sampling never produced a connected graph within the
    /// retry budget.
    #[error("no connected graph in {attempts} draws (L={l}, p={p})")]
    DisconnectedGraph { l: usize, p: f64, attempts: usize },

    /// An explicitly supplied communication graph is disconnected.
    #[error("communication graph is disconnected ({components} components)")]
    NotConnected { components: usize },

    /// Fewer tasks than nodes, so the disjoint task partition would leave
    /// some node empty.
    #[error("{t} tasks cannot be partitioned over {l} nodes nonemptily")]
    TooFewTasks { t: usize, l: usize },

    /// The mixing matrix does not contract disagreement (spectral gap
    /// parameter `gamma >= 1`), so no finite round count reaches the
    /// requested consensus accuracy.
    #[error("consensus cannot reach accuracy {epsilon}: gamma = {gamma} >= 1")]
    NoContraction { gamma: f64, epsilon: f64 },

    /// An iterate diverged: non-finite entries, or rank collapse during
    /// the projection step (step size too large or degenerate data).
    #[error("divergence detected in {context} at iteration {iteration}")]
    Divergence {
        context: &'static str,
        iteration: usize,
    },

    /// An iterative eigensolver or singular-value routine failed to
    /// converge within its iteration cap.
    #[error("{context} did not converge within {max_iters} iterations")]
    NoConvergence {
        context: &'static str,
        max_iters: usize,
    },

    /// Invalid experiment configuration.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Underlying I/O failure while reading or writing experiment files.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed JSON metadata or problem-file header.
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Helper for dimension-mismatch errors.
    pub fn dim(context: &'static str, expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.into(),
            got: got.into(),
        }
    }
}
