use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("potential is not confining (liminf kappa = {0})")]
    NotConfining(f64),
    #[error("R1 not found below r = {0}; increase r_max")]
    IncreaseRMax(f64),
    #[error("c(V,W,sigma0) has no sign change on [{lo}, {hi}]")]
    NoThresholdInInterval { lo: f64, hi: f64 },
    #[error("blow-up in ensemble {ensemble} particle {particle} at t = {time}")]
    BlowUp {
        ensemble: char,
        particle: usize,
        time: f64,
    },
    #[error("N = {n} exceeds the exact solver cap {cap}; use a sliced estimate")]
    UseSlicedEstimate { n: usize, cap: usize },
    #[error("rate fit impossible: {0}")]
    FitImpossible(String),
    #[error("oracle undefined: {0}")]
    OracleUndefined(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn config_err(field: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_string(),
        message: msg.into(),
    }
}
