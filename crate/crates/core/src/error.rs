use thiserror::Error;

#[derive(Debug, Error)]
pub enum FgamError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("numerical failure in {context}: {detail}")]
    Numerical { context: String, detail: String },
}

impl FgamError {
    pub(crate) fn numerical(context: impl Into<String>, detail: impl Into<String>) -> Self {
        FgamError::Numerical {
            context: context.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        FgamError::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, FgamError>;

pub(crate) fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(FgamError::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}
