use thiserror::Error;

/// Errors raised by the pricing, calibration and simulation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("time-scale separation violated: kappa * epsilon = {product} >= 1")]
    TimeScaleSeparation { product: f64 },

    #[error("negative VIX radicand {radicand} (corrupted state?)")]
    NegativeRadicand { radicand: f64 },

    #[error("infeasible hidden state: solved z = {z} < 0")]
    InfeasibleState { z: f64 },

    #[error("contour shift {shift} must exceed 1 for the payoff transform to exist")]
    ContourViolation { shift: f64 },

    #[error("characteristic function overflow: Re(C + xi*D) = {exponent} at k = {k}")]
    CharFnOverflow { exponent: f64, k: String },

    #[error("correction factor pole: |g e^(tau d) - 1| = {distance} at k = {k}")]
    CorrectionPole { distance: f64, k: String },

    #[error(transparent)]
    Quadrature(#[from] QuadError),

    #[error("non-central chi-square series did not converge within {terms} terms (lambda = {lambda})")]
    SeriesNonConvergence { terms: usize, lambda: f64 },

    #[error("imaginary residue {residue:e} exceeds tolerance for a real price {price}")]
    ImaginaryResidue { residue: f64, price: f64 },

    #[error("no implied volatility: {0}")]
    NoRoot(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty feasible interval for the fast factor (y_max = {y_max})")]
    EmptyFeasibleInterval { y_max: f64 },

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("invalid Monte Carlo configuration: {0}")]
    McConfig(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Data(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Data(e.to_string())
    }
}

/// Failure of the adaptive integrator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadError {
    #[error("quadrature did not converge: node budget {max_nodes} exhausted with error estimate {error:e} (integral ~ {estimate:e})")]
    NoConvergence {
        max_nodes: usize,
        estimate: f64,
        error: f64,
    },

    #[error("non-finite integrand value at x = {at}")]
    NonFinite { at: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            reason: format!("must be finite and > 0, got {value}"),
        })
    }
}

pub(crate) fn check_non_negative(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            reason: format!("must be finite and >= 0, got {value}"),
        })
    }
}
