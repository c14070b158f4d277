use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("index {index} out of range for {what} (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("enumeration budget exceeded: {required} trajectories required, budget is {budget}")]
    BudgetExceeded { required: u128, budget: u64 },

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Usage(_)
            | Error::Format(_)
            | Error::IndexOutOfRange { .. }
            | Error::BudgetExceeded { .. } => 2,
            Error::Io(_) => 3,
            Error::Training(_) | Error::UndefinedCorrelation(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
