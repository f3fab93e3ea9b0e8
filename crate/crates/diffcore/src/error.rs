use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("loss has no recorded graph")]
    NoGraph,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T, E = DiffError> = std::result::Result<T, E>;

pub(crate) fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> DiffError {
    DiffError::ShapeMismatch { op, lhs: lhs.to_vec(), rhs: rhs.to_vec() }
}
