use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("{what} exceeds cap: requested {requested}, cap {cap}")]
    CapExceeded { what: &'static str, requested: u128, cap: u128 },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),

    #[error("infeasible block edge pattern: {0}")]
    InfeasiblePattern(String),

    #[error("shape mismatch: (s,t)=({s1},{t1}) vs ({s2},{t2})")]
    ShapeMismatch { s1: usize, t1: usize, s2: usize, t2: usize },

    #[error("flatness bound is vacuous for c={c} (needs c > 4 ln 2)")]
    VacuousBound { c: f64 },

    #[error("unique tuples of length {len} do not exist over {domain} strings")]
    NoUniqueTuples { len: usize, domain: usize },

    #[error("Gram matrix singular: local dimension {dim} < fold count {q}")]
    SingularGram { dim: usize, q: usize },

    #[error("numerical disagreement in {what}: {delta:e} > {tol:e}")]
    Disagreement { what: &'static str, delta: f64, tol: f64 },

    #[error("invalid key material: {0}")]
    InvalidKey(String),

    #[error("unknown check `{0}`")]
    UnknownCheck(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, Error>;
