use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("point outside the chart or frame domain: {0}")]
    OutsideDomain(String),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("metric lost positive definiteness; integration reached |t| = {reached}")]
    NotPositiveDefinite { reached: f64 },
    #[error("requested |t| = {requested} exceeds the horizon {horizon}")]
    Horizon { requested: f64, horizon: f64 },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("unsupported for this model: {0}")]
    Unsupported(String),
    #[error("degenerate plane: |X ^ Y| = {0:e}")]
    DegeneratePlane(f64),
    #[error("baseline is not critical (residual {0:e})")]
    NonCritical(f64),
    #[error("field is not Killing (residual {0:e})")]
    NotKilling(f64),
}

pub type Result<T> = std::result::Result<T, Error>;
