use alloc::string::String;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training failure: {0}")]
    TrainingFailure(String),

    #[error("privacy budget exceeded: spent {spent:.4} > allowed {budget:.4}")]
    BudgetExceeded { spent: f64, budget: f64 },

    #[error("infeasible privacy target: {0}")]
    Infeasible(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !($cond) {
            return Err($crate::error::Error::InvalidArgument(alloc::format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
