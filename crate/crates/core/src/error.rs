use alloc::string::String;

use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("basis dimension {dimension} exceeds cap {cap}")]
    DimensionCapExceeded { dimension: u128, cap: usize },

    #[error("mode {mode} outside -{cutoff}..={cutoff}")]
    ModeOutOfRange { mode: i64, cutoff: usize },

    #[error("position {x} is not on the lattice with spacing {spacing}")]
    OffLatticePosition { x: f64, spacing: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("N-bound violated: measured {measured} > kernel norm {bound}")]
    BoundViolated { measured: f64, bound: f64 },

    #[error("resolvent residual {residual:e} at lambda = {lambda_re}{lambda_im:+}i")]
    NearSingularResolvent {
        lambda_re: f64,
        lambda_im: f64,
        residual: f64,
    },

    #[error("beta + H(t) has lowest eigenvalue {lowest} < 1 at t = {time}")]
    LowerBoundViolated { time: f64, lowest: f64 },

    #[error("fixed-point iteration did not converge after {iterations} iterations (last change {change:e})")]
    NoConvergence { iterations: usize, change: f64 },

    #[error("approximation levels exhausted before saturation (last change {last_change:e})")]
    NoSaturation { last_change: f64 },

    #[error("weight supports overlap or are out of order")]
    SupportOverlap,

    #[error("shift {shift} is not a multiple of the step {step}")]
    ShiftNotGridAligned { shift: f64, step: f64 },

    #[error("support [{lo}, {hi}] does not fit strictly inside the grid")]
    SupportOutsideGrid { lo: f64, hi: f64 },

    #[error("time support [{lo}, {hi}] is not strictly inside the bracket ({sigma}, {tau})")]
    BracketTooTight {
        lo: f64,
        hi: f64,
        sigma: f64,
        tau: f64,
    },

    #[error("time supports are not separated: later function starts at {later_start}, earlier ends at {earlier_end}")]
    SupportsNotTimeSeparated { later_start: f64, earlier_end: f64 },

    #[error("mode {mode}: instantaneous frequency squared {frequency_squared} <= 0")]
    InstabilityDetected { mode: i64, frequency_squared: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
