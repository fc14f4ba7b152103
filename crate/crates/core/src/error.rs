use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("primitive `{0}` has no tower propagation at the requested order")]
    UnsupportedPrimitive(&'static str),

    #[error("non-finite value encountered in {0}")]
    NumericalOverflow(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeError { expected: usize, got: usize },

    #[error("unknown time-differencing scheme `{0}`")]
    UnknownScheme(String),

    #[error("unknown problem `{0}`")]
    UnknownProblem(String),

    #[error("derivative tower of order {have} is too short, operator needs order {need}")]
    OrderError { have: usize, need: usize },

    #[error("reference solver diverged at t = {t}")]
    OracleDiverged { t: f64 },

    #[error("reference field is identically zero")]
    DegenerateReference,

    #[error("invalid input: {0}")]
    DomainError(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
