use thiserror::Error;

/// Errors produced by the grid, operator, time-stepping and diagnostic layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("expected {expected} vector components, got {got}")]
    ComponentCount { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("backend validity violated: {0}")]
    BackendValidity(String),

    #[error("elliptic solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("Rayleigh-Taylor coefficient not positive (min a = {min_a:e})")]
    NonPositiveTaylor { min_a: f64 },

    #[error("logarithm argument not positive (min m*a = {0:e})")]
    NonPositiveLog(f64),

    #[error("solution blew up at t = {t}")]
    BlowUp { t: f64 },

    #[error("time step underflow at t = {t} (dt = {dt:e})")]
    StepUnderflow { t: f64, dt: f64 },

    #[error("series needs at least {needed} samples, got {got}")]
    SeriesTooShort { needed: usize, got: usize },

    #[error("series time stride is not uniform")]
    NonUniformStride,

    #[error("overflow evaluating functional {0}")]
    Overflow(String),
}

pub type Result<T> = std::result::Result<T, Error>;
