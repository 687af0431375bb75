//! Crate-wide error type.
//!
//! One enum covers the whole pipeline so errors can travel from the
//! innermost numeric routine to the CLI without re-wrapping. Variants that
//! decide control flow elsewhere (skip-and-warn at rank-deficient time
//! points, replicate accounting in the bootstrap) carry enough context to
//! be matched on, not just displayed.

use std::fmt;

/// Error type for panel handling, estimation, smoothing, bootstrap, and
/// simulation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input data violates the documented formats or invariants
    /// (CSV layout, indicator values, duplicate rows, non-finite numbers).
    #[error("malformed input: {0}")]
    MalformedInput(String),

    /// A configuration value is outside its documented domain.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Time index outside the estimable range `1..T` (0-based; the first
    /// grid point has no lagged mediator).
    #[error("time index {index} out of range: estimable indices are 1..{t_len}")]
    InvalidTimeIndex { index: usize, t_len: usize },

    /// The stacked design at one time point has numerical rank below the
    /// number of coefficients; the caller skips the point.
    #[error("rank-deficient design: rank {rank} < {needed} coefficients")]
    RankDeficient { rank: usize, needed: usize },

    /// Fewer estimable time points than the pipeline can smooth.
    #[error("too few estimable time points: {found} (need at least {needed})")]
    TooFewTimePoints { found: usize, needed: usize },

    /// Not enough points for a fit that needs a minimum sample
    /// (e.g. the quartic pilot of the rule-of-thumb bandwidth needs 5).
    #[error("insufficient points: {found} (need at least {needed})")]
    InsufficientPoints { found: usize, needed: usize },

    /// Local-linear weights are undefined at this target: fewer than two
    /// source points carry kernel mass, or the moment matrix is singular.
    #[error("degenerate smoothing neighborhood at t = {target}: {reason} (widen the bandwidth)")]
    DegenerateNeighborhood { target: f64, reason: String },

    /// Evaluation point beyond one bandwidth outside the source range.
    #[error("evaluation point {point} outside smoothable range [{lo}, {hi}]")]
    EvalOutOfRange { point: f64, lo: f64, hi: f64 },

    /// A smoothing failure tagged with the series it came from
    /// (`alpha[k]`, `gamma[k]`, or `beta`).
    #[error("series {series}: {source}")]
    Series {
        series: String,
        #[source]
        source: Box<Error>,
    },

    /// More than 10% of bootstrap replicates failed to produce estimates.
    #[error("too many failed bootstrap replicates: {failed} of {total} (more than 10%)")]
    TooManyFailures { failed: usize, total: usize },

    /// A percentile was requested from an empty sample.
    #[error("empty sample")]
    EmptySample,

    /// The reference curve has zero range, so range-normalized error
    /// metrics are undefined.
    #[error("reference curve has zero range; MADE/WASE are undefined")]
    ZeroRange,

    /// Two curves that must share evaluation points do not.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// CSV syntax or serialization failure. Read-side instances mean the
    /// input file is malformed; write-side instances wrap I/O failures.
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Helper for formatted [`Error::MalformedInput`] values.
    pub fn malformed(msg: impl fmt::Display) -> Self {
        Error::MalformedInput(msg.to_string())
    }

    /// Helper for formatted [`Error::InvalidConfig`] values.
    pub fn config(msg: impl fmt::Display) -> Self {
        Error::InvalidConfig(msg.to_string())
    }

    /// Attach the name of the coefficient series a smoothing error came from.
    pub fn in_series(self, series: impl Into<String>) -> Self {
        Error::Series {
            series: series.into(),
            source: Box::new(self),
        }
    }
}
