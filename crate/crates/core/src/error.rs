use std::path::PathBuf;

use thiserror::Error;

use crate::data::FrailtyLabel;

#[derive(Debug, Error)]
pub enum Error {
    #[error("Fried score {0} is outside 0..=5")]
    FriedScoreOutOfRange(i64),

    #[error("manifest {path}, line {line}: {message}")]
    ManifestParse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate participant id `{0}`")]
    DuplicateParticipant(String),

    #[error("participant `{id}`: label {label} disagrees with Fried score {score} (implies {implied})")]
    LabelScoreMismatch {
        id: String,
        label: FrailtyLabel,
        score: u8,
        implied: FrailtyLabel,
    },

    #[error("participant `{id}`: frame directory {} does not exist", path.display())]
    MissingFrameDirectory { id: String, path: PathBuf },

    #[error("participant `{id}`: {count} frames, fewer than the minimum {min}")]
    TooFewFrames { id: String, count: usize, min: usize },

    #[error("invalid sequence: {0}")]
    InvalidSequence(String),

    #[error("cannot stratify into {k} folds: class {label} has only {count} participants")]
    Stratification {
        label: FrailtyLabel,
        count: usize,
        k: usize,
    },

    #[error("invalid value: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("non-finite loss at iteration {iteration}: ce={ce} triplet={triplet} total={total}")]
    NonFiniteLoss {
        iteration: usize,
        ce: f64,
        triplet: f64,
        total: f64,
    },

    #[error("checkpoint {}: {message}", path.display())]
    Checkpoint { path: PathBuf, message: String },

    #[error("image {}: {message}", path.display())]
    Image { path: PathBuf, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse failure class, used for process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Stratification { .. } => ErrorClass::Config,
            Error::NonFiniteLoss { .. } => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }

    /// Short stable identifier for machine-readable error lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::FriedScoreOutOfRange(_) => "fried_score_out_of_range",
            Error::ManifestParse { .. } => "manifest_parse",
            Error::DuplicateParticipant(_) => "duplicate_participant",
            Error::LabelScoreMismatch { .. } => "label_score_mismatch",
            Error::MissingFrameDirectory { .. } => "missing_frame_directory",
            Error::TooFewFrames { .. } => "too_few_frames",
            Error::InvalidSequence(_) => "invalid_sequence",
            Error::Stratification { .. } => "stratification",
            Error::Validation(_) => "validation",
            Error::Config(_) => "config",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::Checkpoint { .. } => "checkpoint",
            Error::Image { .. } => "image",
            Error::Io { .. } => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
