use thiserror::Error;

/// Errors raised by the estimators, designs and harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("iteration cap reached without convergence: {0}")]
    NonConvergence(String),
    #[error("calibration constraints not satisfied: {0}")]
    CalibrationNonConvergence(String),
    #[error("singular design: {0}")]
    SingularDesign(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("collinear calibration auxiliaries: {0}")]
    CollinearAuxiliaries(String),
    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),
    #[error("empty imputation source: {0}")]
    EmptySource(String),
    #[error("stratum {0} has incomplete units but no observed support points")]
    EmptySupport(u32),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("insufficient controls: need {needed}, have {available}")]
    InsufficientControls { needed: usize, available: usize },
    #[error("schema error: {0}")]
    SchemaError(String),
    #[error("parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("kernel weights underflow at evaluation point {0}")]
    DegenerateKernel(usize),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    /// True for errors caused by the numerics of one replicate rather than
    /// by the configuration or the input files.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence(_)
                | Error::CalibrationNonConvergence(_)
                | Error::SingularDesign(_)
                | Error::CollinearAuxiliaries(_)
                | Error::DegenerateVariance(_)
                | Error::EmptySource(_)
                | Error::EmptySupport(_)
                | Error::DegenerateKernel(_)
                | Error::InsufficientControls { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
