use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("kernel exponent alpha = {alpha} not allowed here: {reason}")]
    InvalidExponent { alpha: f64, reason: &'static str },
    #[error("invalid bistable nonlinearity: {0}")]
    InvalidNonlinearity(String),
    #[error("tilt |h| = {h} outside the admissible range (H = {h_max})")]
    TiltOutOfRange { h: f64, h_max: f64 },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("Newton iteration failed after {iterations} steps (residual {residual:e})")]
    NewtonFailed { iterations: usize, residual: f64 },
    #[error("profile lost monotonicity during the wave solve")]
    Monotonicity,
    #[error("unstable time step: dt = {dt:e} exceeds the stability bound {bound:e}")]
    Cfl { dt: f64, bound: f64 },
    #[error("phase field blew up at step {step} with dt = {dt:e} (sup |u| = {value:e})")]
    Blowup { step: usize, dt: f64, value: f64 },
    #[error("point is not on the front (|d| = {0:e})")]
    NotOnFront(f64),
    #[error("invalid polyline: {0}")]
    InvalidPolyline(String),
    #[error("config error at line {line}, field `{field}`: {message}")]
    Config { line: usize, field: String, message: String },
    #[error("stage `{stage}` failed: {source}")]
    Stage { stage: String, source: Box<Error> },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
