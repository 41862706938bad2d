use thiserror::Error;

/// Errors surfaced by pricing, calibration, and data-loading routines.
#[derive(Debug, Error)]
pub enum PricingError {
    /// Input failed validation (non-finite, out of range, inconsistent lengths, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// |sigma_tilde - sigma| fell below the degeneracy epsilon; no unique shadow rate.
    #[error("degenerate volatility spread: |d_sigma| = {spread:e} < epsilon = {epsilon:e} at t = {t}")]
    DegenerateVolatilitySpread { spread: f64, epsilon: f64, t: f64 },

    /// Option maturity is not strictly after the valuation time.
    #[error("degenerate maturity: T - t = {tau} must be positive")]
    MaturityDegenerate { tau: f64 },

    /// Root bracketing failed or the objective returned non-finite values.
    #[error("no root: {0}")]
    NoRoot(String),

    /// Iterative solver stopped before reaching the requested tolerance.
    #[error("tolerance not met: residual {residual:e} after {iterations} iterations (requested {requested:e})")]
    ToleranceNotMet {
        residual: f64,
        iterations: u32,
        requested: f64,
    },

    /// Adaptive quadrature exceeded its function-evaluation budget.
    #[error("quadrature budget exceeded: {evaluations} evaluations, error estimate {error_estimate:e}")]
    QuadratureBudgetExceeded {
        evaluations: u64,
        error_estimate: f64,
    },

    /// One-step risk-neutral probability left (0, 1): the step size is too
    /// large for the drift spread.
    #[error("no-arbitrage violation at step {step}: risk-neutral q = {q} outside (0, 1)")]
    NoArbitrageViolation { step: usize, q: f64 },

    /// Drift is zero where the deflator r_f/mu must be formed.
    #[error("zero drift at t = {t}: deflator r_f/mu is undefined")]
    ZeroDrift { t: f64 },

    /// The deflator r_f/mu is unbounded (or not positive) over the schedule.
    #[error("unbounded deflator: sup(pi + 1/pi) = {sup:e} exceeds {bound:e}")]
    UnboundedDeflator { sup: f64, bound: f64 },

    /// Operation requires the perpetual derivative's bank-account leg h0 to vanish.
    #[error("operation requires h0 = 0, got h0 = {h0}")]
    RequiresZeroH0 { h0: f64 },

    /// Replication weight undefined because the up and down prices coincide.
    #[error("degenerate node: up and down prices coincide at {price}")]
    DegenerateNode { price: f64 },

    /// Tree or path values overflowed the representable range.
    #[error("overflow: {0}")]
    Overflow(String),

    /// Rolling window does not fit the series.
    #[error("window too long: window {window} needs {needed} observations, series has {available}")]
    WindowTooLong {
        window: usize,
        needed: usize,
        available: usize,
    },

    /// A data file failed to parse; row numbers are 1-based and count the header.
    #[error("parse error at row {row}: {message}")]
    ParseError { row: usize, message: String },

    /// A price observation was zero or negative.
    #[error("non-positive price at row {row}: {value}")]
    NonPositivePrice { row: usize, value: f64 },

    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for PricingError {
    fn from(e: csv::Error) -> Self {
        match e.position() {
            Some(pos) => PricingError::ParseError {
                row: pos.line() as usize,
                message: e.to_string(),
            },
            None => PricingError::ParseError {
                row: 0,
                message: e.to_string(),
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, PricingError>;
