use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("rotation underdetermined")]
    RotationUnderdetermined,
    #[error("behind camera")]
    BehindCamera,
    #[error("invalid depth")]
    InvalidDepth,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("degenerate sample")]
    DegenerateSample,
    #[error("cheirality failure")]
    CheiralityFailure,
    #[error("insufficient support: {0}")]
    InsufficientSupport(String),
    #[error("no hypothesis")]
    NoHypothesis,
    #[error("oracle bound exceeded: {0} correspondences (max {1})")]
    OracleBoundExceeded(usize, usize),
    #[error("outside field")]
    OutsideField,
    #[error("no descriptor support")]
    NoDescriptorSupport,
    #[error("empty error list")]
    EmptyErrors,
    #[error("no valid pixels")]
    NoValidPixels,
    #[error("non-finite objective at parameter {0}")]
    NonFiniteObjective(usize),
    #[error("training diverged at step {step}: total loss {total}")]
    Divergence { step: usize, total: f64 },
    #[error("visibility rejection exhausted after {0} attempts")]
    VisibilityRejected(usize),
    #[error("invalid config: {field}: {reason}")]
    InvalidConfig {
        field: &'static str,
        reason: &'static str,
    },
}

impl Error {
    pub(crate) fn config(field: &'static str, reason: &'static str) -> Self {
        Error::InvalidConfig { field, reason }
    }

    /// True for failures caused by numerics rather than malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RotationUnderdetermined
                | Error::DegenerateSample
                | Error::CheiralityFailure
                | Error::NoHypothesis
                | Error::NonFiniteObjective(_)
                | Error::Divergence { .. }
        )
    }
}
