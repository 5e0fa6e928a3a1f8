use std::path::PathBuf;

use crate::model::ImageId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid bounding box: {0}")]
    InvalidBox(String),
    #[error("skin tone {0} is outside the Monk scale 1..=10")]
    SkinToneOutOfRange(u8),
    #[error("confidence {0} is outside [0, 1]")]
    ConfidenceOutOfRange(f64),
    #[error("weather intensity {0} is outside [0, 1]")]
    IntensityOutOfRange(f64),
    #[error("darkness factor {0} is outside [0, 1]")]
    DarknessOutOfRange(f64),
    #[error("group spec `{0}` has no predicates")]
    EmptyGroupSpec(String),
    #[error("image {found} mixed into a match for image {expected}")]
    MixedImageIds { expected: ImageId, found: ImageId },
    #[error("IoU threshold {0} is outside (0, 1)")]
    ThresholdOutOfRange(f64),
    #[error("threshold list is empty")]
    EmptyThresholds,
    #[error("thresholds must be strictly increasing")]
    ThresholdsNotIncreasing,
    #[error("match results for image {0} use a different threshold ladder")]
    InconsistentThresholds(ImageId),
    #[error("reporting threshold {0} is not part of the threshold ladder")]
    ReportingThresholdMissing(f64),
    #[error("threshold map must cover exactly the ten thresholds 0.50..=0.95")]
    NonStandardLadder,
    #[error("no group specs supplied")]
    NoGroups,
    #[error("group `{0}` has an empty sample list")]
    EmptySamples(String),
    #[error("image {0} has no pixel data")]
    MissingPixels(ImageId),
    #[error("pixel buffer for image {0} does not match its dimensions")]
    PixelShape(ImageId),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{}: {message}", path.display())]
    Load { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Coarse classification used for process exit codes and FFI status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Load,
    Validation,
    Io,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Load { .. } | Error::Json(_) | Error::Image(_) => ErrorKind::Load,
            Error::Io(_) | Error::Csv(_) => ErrorKind::Io,
            _ => ErrorKind::Validation,
        }
    }

    pub(crate) fn load(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Load {
            path: path.into(),
            message: message.into(),
        }
    }
}
