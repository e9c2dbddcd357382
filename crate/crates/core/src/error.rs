use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (min eigenvalue {min_eigenvalue:e}, max {max_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64, max_eigenvalue: f64 },
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("invalid correlation matrix: {0}")]
    InvalidCorrelation(String),
    #[error("diagonal entry {index} is not strictly positive ({value})")]
    NonPositiveDiagonal { index: usize, value: f64 },
    #[error("column {0} has zero variance")]
    DegenerateColumn(usize),
    #[error("column {0} of the innovation window has zero norm")]
    ZeroNormColumn(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-positive price {value} at row {row}, column {col}")]
    NonPositivePrice { row: usize, col: usize, value: f64 },
    #[error("panels share no common time stamps")]
    EmptyIntersection,
    #[error("series too short: need at least {needed} observations, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("invalid panel: {0}")]
    InvalidPanel(String),

    #[error("regression design matrix is singular")]
    SingularDesign,
    #[error("lag-0 autocovariance matrix is singular")]
    SingularGamma0,

    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("volatility filter blew up at t = {t}: {reason}")]
    FilterBlowup { t: usize, reason: String },
    #[error("optimizer did not converge after {iterations} iterations")]
    DidNotConverge { iterations: usize },
    #[error("likelihood is not finite at the optimum")]
    FilterBlowupAtOptimum,
    #[error("hessian is not positive definite; standard errors withheld")]
    HessianNotPD,
    #[error("models are not nested: {0}")]
    NotNested(String),

    #[error("too few bootstrap replications: {got} (minimum {min})")]
    TooFewReplications { got: usize, min: usize },
    #[error("explosive parameters: variance {value:e} at step {t}")]
    ExplosiveParameters { t: usize, value: f64 },
    #[error("window {window} is longer than the series ({len})")]
    WindowTooLong { window: usize, len: usize },

    #[error("{0} does not exist")]
    MissingPath(std::path::PathBuf),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse error classes, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Parse,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Parse { .. } | Error::Io(_) | Error::InvalidPanel(_) => ErrorClass::Parse,
            Error::InvalidConfig(_) | Error::MissingPath(_) => ErrorClass::Usage,
            _ => ErrorClass::Numeric,
        }
    }

    pub fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Usage => 2,
            ErrorClass::Parse => 3,
            ErrorClass::Numeric => 4,
        }
    }
}
