use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown initial datum `{0}` (expected shell_gaussian, shell_polynomial or zero)")]
    UnknownDatum(String),

    #[error("invalid datum parameters for `{name}`: {reason}")]
    InvalidDatum { name: String, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("evaluation at the spatial origin (|x| = {radius:e}); k = x/|x| is undefined")]
    Origin { radius: f64 },

    #[error("characteristic reached r = {radius:e} <= r_floor = {floor:e} at v = {v}; the axis bound is violated")]
    AxisReached { radius: f64, floor: f64, v: f64 },

    #[error("particle {index} at r = {radius} lies outside the shell grid (r_max = {r_max})")]
    OutsideGrid { index: usize, radius: f64, r_max: f64 },

    #[error("radius {radius} is outside the field profile (r_max = {r_max})")]
    OutsideProfile { radius: f64, r_max: f64 },

    #[error("negative moment g_plus = {value:e} in shell {shell}")]
    NegativeMoment { shell: usize, value: f64 },

    #[error("non-finite field value at step {step} (v = {v})")]
    NonFiniteField { step: usize, v: f64 },

    #[error("invariant violated at step {step}: {what}")]
    Invariant { step: usize, what: String },

    #[error("advanced time {v} is outside the recorded history [{v_min}, {v_max}]")]
    OutOfHistory { v: f64, v_min: f64, v_max: f64 },

    #[error("insufficient history: evaluation needs data up to v = {required_v_final}, recorded up to v = {v_max}")]
    InsufficientHistory { required_v_final: f64, v_max: f64 },

    #[error("grid of {dims:?} nodes is too small for the central-difference stencil")]
    GridTooSmall { dims: [usize; 3] },

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
