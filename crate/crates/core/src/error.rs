use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),

    #[error("shape mismatch in {tensor}: expected {expected} values, found {found}")]
    ShapeMismatch {
        tensor: String,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {tensor} at flat index {index}")]
    NonFinite { tensor: String, index: usize },

    #[error("invalid label {value} in {tensor} at flat index {index}")]
    InvalidLabel {
        tensor: String,
        index: usize,
        value: u8,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no positive samples to balance against")]
    NoPositives,

    #[error("insufficient data for {what}: need at least {needed}, have {have}")]
    InsufficientData {
        what: String,
        needed: usize,
        have: usize,
    },

    #[error("negative value {value} under a poisson baseline for feature {feature}")]
    NegativeCount { feature: String, value: f64 },

    #[error("baseline kind mismatch: {0}")]
    BaselineKind(String),

    #[error("missing global baseline for feature {0}")]
    MissingBaseline(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("backward called without a recorded forward pass")]
    NoForwardPass,

    #[error("training set has no samples of class {0}")]
    EmptyClass(u8),

    #[error("label {0} is not a binary class")]
    UnknownLabel(u8),

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },

    #[error("empty input: {0}")]
    Empty(String),
}
