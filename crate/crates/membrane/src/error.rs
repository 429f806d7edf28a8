//! Error types shared across the simulation pipeline.

use thiserror::Error;

/// Failures that can occur while building geometry, solving the elliptic
/// subproblems, or advancing the coupled system in time.
#[derive(Debug, Error)]
pub enum SimError {
    /// `|R_alpha x R_beta|` dropped below the degeneracy threshold somewhere
    /// on the grid, so the chart no longer parametrizes an immersed surface.
    #[error("degenerate chart: min |R_alpha x R_beta| = {min_jac:.3e} < {threshold:.3e}")]
    DegenerateChart { min_jac: f64, threshold: f64 },

    /// The conformal factor lost uniform positivity (min E fell below c0).
    #[error("conformal factor too small: min E = {min_e:.3e} < c0 = {c0:.3e}")]
    SmallConformalFactor { min_e: f64, c0: f64 },

    /// An iterative solve ran out of its iteration budget.
    #[error("no convergence after {iterations} iterations (relative residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    /// The zeroth-order pressure coefficient is unusable (negative beyond
    /// roundoff, or with mean too small for the solver to be well posed).
    #[error("pressure coefficient rejected: {reason}")]
    CoefficientViolation { reason: String },

    /// Grid periods do not match the conformal chart of the requested torus.
    #[error("grid period does not match the conformal chart: expected {expected:.15e}, got {got:.15e}")]
    BadAspect { expected: f64, got: f64 },

    /// A time step produced non-finite field values.
    #[error("time step produced non-finite fields at t = {t:.6e}")]
    StepTooLarge { t: f64 },

    /// A scalar or grid parameter is outside its documented domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Requested check name is not in the inequality registry.
    #[error("unknown lemma id {0:?} (known: product, commutator, operator-upper, operator-lower)")]
    UnknownLemma(String),

    /// The sweep iteration expanded for two consecutive sweeps; the time
    /// window is too large for the fixed point to attract.
    #[error("sweeps stopped contracting: ratio {ratio:.3} at sweep {sweep} (shrink the window)")]
    NonContraction { sweep: usize, ratio: f64 },

    /// A config file could not be parsed.
    #[error("config parse error at line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    /// A config value violates a documented constraint.
    #[error("config validation failed: {0}")]
    ConfigValidation(String),

    /// A snapshot file is truncated, mislabeled, or inconsistent.
    #[error("snapshot format error: {0}")]
    SnapshotFormat(String),

    /// Underlying file I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
