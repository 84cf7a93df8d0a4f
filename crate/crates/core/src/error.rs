use thiserror::Error;

use crate::skeleton::BodyPart;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient frames: need at least {needed}, got {got}")]
    InsufficientFrames { needed: usize, got: usize },

    #[error("invalid frame: {0}")]
    InvalidFrame(String),

    #[error("frame times must be strictly increasing (index {0})")]
    NonMonotonicTime(usize),

    #[error("degenerate axis: keypoints A and B coincide")]
    DegenerateAxis,

    #[error("singular frame: transceiver direction is parallel to the part axis")]
    SingularFrame,

    #[error("non-causal delay: {0} s")]
    NonCausalDelay(f64),

    #[error("point coincides with transceiver")]
    ZeroRange,

    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),

    #[error("empty trajectory")]
    EmptyTrajectory,

    #[error("no skeleton frame for snapshot {0}")]
    MissingFrame(usize),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },

    #[error("backward called without a forward cache")]
    NoCache,

    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("negative count {0}")]
    NegativeCount(i64),

    #[error("non-positive rate {0}")]
    NonPositiveRate(f64),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("insufficient data for part {0}")]
    InsufficientData(BodyPart),

    #[error("missing model for part {0}")]
    MissingModel(BodyPart),

    #[error("sequence of {len} snapshots is shorter than window {window}")]
    SequenceTooShort { len: usize, window: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("scattering point has no body-part label")]
    MissingPartLabel,

    #[error("profile has zero total power")]
    ZeroPower,

    #[error("empty input")]
    EmptyInput,

    #[error("non-uniform sampling at snapshot {0}")]
    NonUniformSampling(usize),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable snake_case identifier used in machine-readable CLI diagnostics.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InsufficientFrames { .. } => "insufficient_frames",
            Error::InvalidFrame(_) => "invalid_frame",
            Error::NonMonotonicTime(_) => "non_monotonic_time",
            Error::DegenerateAxis => "degenerate_axis",
            Error::SingularFrame => "singular_frame",
            Error::NonCausalDelay(_) => "non_causal_delay",
            Error::ZeroRange => "zero_range",
            Error::NonPositiveDistance(_) => "non_positive_distance",
            Error::EmptyTrajectory => "empty_trajectory",
            Error::MissingFrame(_) => "missing_frame",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::NoCache => "no_cache",
            Error::InvalidSpec(_) => "invalid_spec",
            Error::Checkpoint(_) => "checkpoint",
            Error::NegativeCount(_) => "negative_count",
            Error::NonPositiveRate(_) => "non_positive_rate",
            Error::EmptyDataset => "empty_dataset",
            Error::InsufficientData(_) => "insufficient_data",
            Error::MissingModel(_) => "missing_model",
            Error::SequenceTooShort { .. } => "sequence_too_short",
            Error::NonFinite(_) => "non_finite",
            Error::MissingPartLabel => "missing_part_label",
            Error::ZeroPower => "zero_power",
            Error::EmptyInput => "empty_input",
            Error::NonUniformSampling(_) => "non_uniform_sampling",
            Error::Config(_) => "config",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
