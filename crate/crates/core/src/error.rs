use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid design: {0}")]
    InvalidDesign(String),
    #[error("mesh spacing {spacing} m yields only {count} vertices (need at least 16)")]
    DegenerateSpacing { spacing: f64, count: usize },
    #[error("grid spacing {h} m is too coarse: {reason}")]
    ResolutionTooCoarse { h: f64, reason: String },
    #[error("CFL violation: max speed {speed} m/s with dt {dt} s and h {h} m")]
    CflViolation { speed: f64, dt: f64, h: f64 },
    #[error("pressure solve did not converge: residual {residual:e} after {iterations} iterations")]
    PoissonDivergence { residual: f64, iterations: usize },
    #[error("simulation failed at step {step}: {source}")]
    StepFailed {
        step: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing record: {0}")]
    MissingRecord(String),
    #[error("checksum mismatch in {0}")]
    ChecksumMismatch(String),
    #[error("malformed data: {0}")]
    Format(String),
    #[error("every design failed; nothing to write")]
    AllDesignsFailed,
    #[error("subsampling factor {factor} too large: {remaining} {what} would remain")]
    FactorTooLarge { factor: usize, remaining: usize, what: &'static str },
    #[error("data fraction {0} selects no training records")]
    EmptySelection(f64),
    #[error("{modes} modes requested on a latent axis of length {len} (at most {max})")]
    ModeOverflow { modes: usize, len: usize, max: usize },
    #[error("non-finite loss on simulation {0}")]
    NonFiniteLoss(String),
    #[error("no input samples")]
    EmptyInput,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] diffcore::DiffError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }
}
