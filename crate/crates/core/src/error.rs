use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter lies outside its family's valid domain.
    #[error("invalid parameter `{field}`: {reason}")]
    Domain { field: String, reason: String },

    /// Two components cannot be compared or combined.
    #[error("incompatible components: {0}")]
    Incompatible(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid value: {0}")]
    Value(String),

    #[error("empty input: {0}")]
    Empty(String),

    /// An assignment does not satisfy the matching constraints.
    #[error("inconsistent assignment: {0}")]
    Consistency(String),

    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn domain(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Domain {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
