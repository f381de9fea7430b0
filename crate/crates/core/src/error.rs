use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure classes, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad arguments or inconsistent inputs supplied by the caller.
    Usage,
    /// Missing, corrupted or unsupported files.
    Data,
    /// A numerical procedure broke down.
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("no guided mode: V = {v:.4} is below the first cutoff")]
    NoGuidedMode { v: f64 },

    #[error("root refinement failed for LP{l}{m}: {reason}")]
    RootRefinement { l: usize, m: usize, reason: String },

    #[error("field not contained in window (edge/peak intensity {ratio:.3e})")]
    FieldNotContained { ratio: f64 },

    #[error("propagated field overflows the padded window at z = {z:.3} um (edge/peak intensity {ratio:.3e})")]
    WindowOverflow { z: f64, ratio: f64 },

    #[error("zero field")]
    ZeroField,

    #[error("negative M² radicand {radicand:.3e} on axis {axis}")]
    NegativeRadicand { axis: char, radicand: f64 },

    #[error("caustic fit failed on axis {axis}: {reason}")]
    CausticFit { axis: char, reason: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("label {value:.4} exceeds scaling constant {constant}")]
    LabelOutOfRange { value: f64, constant: f64 },

    #[error("checksum mismatch for {file}: expected {expected}, found {found}")]
    Checksum {
        file: String,
        expected: String,
        found: String,
    },

    #[error("unsupported format version {found} (supported: {supported})")]
    UnsupportedVersion { found: String, supported: String },

    #[error("truncated data in {file}: expected {expected} bytes, found {found}")]
    Truncated {
        file: String,
        expected: usize,
        found: usize,
    },

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidInput(_) | Error::ShapeMismatch(_) => ErrorClass::Usage,
            Error::NoGuidedMode { .. }
            | Error::RootRefinement { .. }
            | Error::FieldNotContained { .. }
            | Error::WindowOverflow { .. }
            | Error::ZeroField
            | Error::NegativeRadicand { .. }
            | Error::CausticFit { .. }
            | Error::NonFinite(_)
            | Error::Divergence(_)
            | Error::LabelOutOfRange { .. } => ErrorClass::Numerical,
            Error::Checksum { .. }
            | Error::UnsupportedVersion { .. }
            | Error::Truncated { .. }
            | Error::Format { .. }
            | Error::Io { .. }
            | Error::Json(_) => ErrorClass::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }
}
