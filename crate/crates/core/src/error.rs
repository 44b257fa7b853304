use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("generator index {index} out of range for a system with {count} fields")]
    IndexOutOfRange { index: usize, count: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("point at distance {distance:.6e} from the center lies outside the ball of radius {limit:.6e}")]
    OutsideDomain { distance: f64, limit: f64 },

    #[error("trajectory escaped the working ball at s = {at:.6e} (distance {distance:.6e} > {limit:.6e})")]
    DomainEscape { at: f64, distance: f64, limit: f64 },

    #[error("step size underflow at s = {at:.6e}")]
    StepUnderflow { at: f64 },

    #[error("parameter component {index} = {value:.6e} outside [-{bound}, {bound}]")]
    OutsideBox { index: usize, value: f64, bound: f64 },

    #[error("structure constants are missing")]
    MissingStructureConstants,

    #[error("the system has no drift field")]
    NoDrift,

    #[error("degenerate frame: numerical rank {rank} < {expected}")]
    Degenerate { rank: usize, expected: usize },

    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("left limit is undefined at t = 0")]
    NoLeftLimit,

    #[error("time derivative undefined at breakpoint t = {t}")]
    AtBreakpoint { t: f64 },

    #[error("invalid control: {0}")]
    InvalidControl(String),

    #[error("invalid vector-field system: {0}")]
    InvalidSystem(String),

    #[error("contraction gate refused: rho = {rho:.6e} exceeds 1/2")]
    GateRefused { rho: f64 },

    #[error("fixed-point iteration did not converge at t = {t} after {iterations} iterations (last increment {increment:.3e})")]
    NonConvergence { t: f64, iterations: usize, increment: f64 },

    #[error("resolvent matrix I - dV/dlambda is singular at t = {t}")]
    SingularResolvent { t: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("config line {line}, column {column}: {message}")]
    Config { line: usize, column: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
