//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Vector/matrix dimensions do not line up with the network spec.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An argument violates a documented precondition.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A quantity that must be finite is NaN or infinite.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: {what}")]
    Divergence { epoch: usize, what: String },

    /// An exactly-zero ε-LRP denominator.
    #[error("division hazard in epsilon-LRP at layer {layer}, unit {unit}: stabilized denominator is exactly zero")]
    DivisionHazard { layer: usize, unit: usize },

    /// A point handed to manifold geometry is not on the manifold.
    #[error("geometry error: {0}")]
    Geometry(String),

    /// A binary container (IDX, checkpoint) is malformed.
    #[error("format error: {0}")]
    Format(String),

    /// A config file could not be parsed.
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code category for the CLI (0 is success).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parameter(_) => 2,
            Error::Io(_) => 3,
            Error::Format(_) => 4,
            Error::Shape(_) => 5,
            Error::Numeric(_) | Error::Divergence { .. } | Error::DivisionHazard { .. } => 6,
            Error::Geometry(_) => 7,
        }
    }
}
