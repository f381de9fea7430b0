use fiberm2::ErrorClass;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] fiberm2::Error),

    #[error("CSV output: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    fn class(&self) -> ErrorClass {
        match self {
            CliError::Usage(_) => ErrorClass::Usage,
            CliError::Core(e) => e.class(),
            CliError::Csv(_) => ErrorClass::Data,
        }
    }

    /// 2 usage, 3 data or integrity, 4 numerical failure.
    pub fn exit_code(&self) -> u8 {
        match self.class() {
            ErrorClass::Usage => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numerical => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.class() {
            ErrorClass::Usage => "usage",
            ErrorClass::Data => "data",
            ErrorClass::Numerical => "numerical",
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
