use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix shape mismatch: {0}")]
    Shape(String),

    #[error("row {row} is not a probability vector (sum = {sum})")]
    NotStochastic { row: usize, sum: f64 },

    #[error("chain is not irreducible: state {unreachable} is not mutually reachable from state 0")]
    NotIrreducible { unreachable: usize },

    #[error("linear system is numerically singular: {0}")]
    SingularSystem(String),

    #[error("reduced Poisson system (I - P without state {pinned}) is numerically singular")]
    SingularReduced { pinned: usize },

    #[error("index {index} out of range for {len} states")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("sampling domain is empty (radius = {radius})")]
    EmptyDomain { radius: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no step-size certificate within scan horizon {horizon}")]
    NoCertificate { horizon: usize },

    #[error("bad index range: {0}")]
    BadRange(String),

    #[error("non-finite iterate produced at step {step}")]
    NonFiniteIterate { step: usize },

    #[error("trajectory carries no martingale-noise log")]
    MissingNoiseLog,

    #[error("value iteration did not converge in {max_iter} iterations (residual {residual:e})")]
    NoConvergence { max_iter: usize, residual: f64 },

    #[error("inadmissible instance: {0}")]
    Inadmissible(String),

    #[error("tail sum does not converge: {0}")]
    DivergentTail(String),

    #[error("no feasible D: {0}")]
    NoFeasibleD(String),

    #[error("infeasible request: {0}")]
    Infeasible(String),

    #[error("config error at line {line}, field `{field}`: {message}")]
    Config {
        line: usize,
        field: String,
        message: String,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    pub(crate) fn config(line: usize, field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            line,
            field: field.into(),
            message: message.into(),
        }
    }
}
