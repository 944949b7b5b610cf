//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the depth-reconstruction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A scalar or structural parameter failed validation.
    #[error("invalid parameter `{name}`: {message}")]
    InvalidParameter { name: &'static str, message: String },

    /// A photon-count cube contained a negative entry.
    #[error("negative photon count {value} at (row {row}, col {col}, bin {bin})")]
    NegativeCount {
        row: usize,
        col: usize,
        bin: usize,
        value: i64,
    },

    /// Two arrays that must agree in shape did not.
    #[error("shape mismatch in {context}: {expected} vs {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    /// A depth value fell outside the normalized range `[0, 1]`.
    #[error("depth value {value} at (row {row}, col {col}) outside [0, 1]")]
    DepthRange { row: usize, col: usize, value: f64 },

    /// An uncertainty value was not strictly positive and finite.
    #[error("uncertainty value {value} at (row {row}, col {col}) is not positive and finite")]
    UncertaintyRange { row: usize, col: usize, value: f64 },

    /// The requested impulse-response window does not fit in the histogram.
    #[error("impulse-response window of {window} taps exceeds {bins} histogram bins")]
    IrfWindow { window: usize, bins: usize },

    /// A weighted median was requested with every weight equal to zero.
    #[error("weighted median over all-zero weights is undefined")]
    AllZeroWeights,

    /// A numeric routine produced NaN or infinity.
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    /// The training loss became non-finite.
    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    TrainingDiverged { epoch: usize, batch: usize },

    /// Edge detection found no edge pixels.
    #[error("edge detector found no edges (flat input or thresholds too high)")]
    EmptyEdgeSet,

    /// A file had the wrong magic, version, or layout.
    #[error("{path}: {message}")]
    Format { path: String, message: String },

    /// A backward pass was requested on a forward pass that recorded no tape.
    #[error("backward pass requires activations recorded by a training-mode forward pass")]
    MissingTape,

    /// An underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Shorthand for [`Error::InvalidParameter`].
    pub fn invalid(name: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            message: message.into(),
        }
    }
}
