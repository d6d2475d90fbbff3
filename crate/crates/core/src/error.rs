use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A precondition of an operation was violated by the caller.
    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// A computation produced NaN or infinity.
    #[error("non-finite value in {context}: {detail}")]
    NonFinite { context: String, detail: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed parameter file: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn non_finite(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::NonFinite {
            context: context.into(),
            detail: detail.into(),
        }
    }
}

/// Fails with [`Error::NonFinite`] naming the first offending coordinate.
pub(crate) fn ensure_finite(values: &[f64], context: &str) -> Result<()> {
    match values.iter().position(|x| !x.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::non_finite(
            context,
            format!("coordinate {i} = {} (dim {})", values[i], values.len()),
        )),
    }
}
