use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("image too small for spline interpolation: axis {axis} has {len} pixels (need at least 3)")]
    ShapeTooSmall { axis: usize, len: usize },
    #[error("field mismatch: {0}")]
    FieldMismatch(String),
    #[error("outside the domain of the functional: {0}")]
    DomainError(String),
    #[error("invalid parameter: {0}")]
    ParamError(String),
    #[error("invalid scale schedule: {0}")]
    ScheduleError(String),
    #[error("backtracking exhausted after {halvings} halvings of the {block} step")]
    BacktrackExhausted { block: &'static str, halvings: usize },
    #[error("invalid configuration at `{field}`: {reason}")]
    ConfigError { field: String, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;
