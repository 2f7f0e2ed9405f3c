use std::path::PathBuf;

use crate::camera::CropRect;

/// Unified error type for the whole pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("crop rect {rect:?} exceeds frame bounds {width}x{height}")]
    RectOutOfBounds {
        rect: CropRect,
        width: usize,
        height: usize,
    },

    #[error("crop rect has zero area")]
    EmptyRect,

    #[error("buffer length {got} does not match {expected} grid cells")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("validity mask marks zero-depth cell {index} as valid")]
    InvalidMask { index: usize },

    #[error("frame sizes differ: {left_width}x{left_height} vs {right_width}x{right_height}")]
    FrameSizeMismatch {
        left_width: usize,
        left_height: usize,
        right_width: usize,
        right_height: usize,
    },

    #[error("point clouds have different sizes: {left} vs {right}")]
    CloudMismatch { left: usize, right: usize },

    #[error("point clouds disagree on source pixel at row {index}")]
    PixelMisalignment { index: usize },

    #[error("operation requires a non-empty point set")]
    EmptyCloud,

    #[error("channels must be normalized before ranking")]
    NotNormalized,

    #[error("channels are already normalized")]
    AlreadyNormalized,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("cannot sample {requested} points from {available}")]
    SampleSize { requested: usize, available: usize },

    #[error("class label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("training batch is empty")]
    EmptyBatch,

    #[error("sample {sample_id} carries no usable label")]
    MissingLabel { sample_id: String },

    #[error("class {class} has no true samples; recall is undefined")]
    UndefinedClass { class: String },

    #[error("class vocabularies differ between manifests")]
    VocabularyMismatch,

    #[error("sample id {sample_id} appears in both train and test manifests")]
    OverlappingSamples { sample_id: String },

    #[error("label {label:?} of sample {sample_id} is not in the class vocabulary")]
    UnknownLabel { label: String, sample_id: String },

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("malformed depth file at byte {offset}: {msg}")]
    DepthFormat { offset: usize, msg: String },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("malformed container at byte {offset}: {msg}")]
    ContainerFormat { offset: usize, msg: String },

    #[error("feature cache record {path} failed its integrity check")]
    CacheIntegrity { path: PathBuf },

    #[error("manifest entry {entry}: {msg}")]
    ManifestValidation { entry: String, msg: String },

    #[error("manifest does not parse: {0}")]
    ManifestFormat(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Wraps an io error with the path it occurred on.
    pub fn file(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::File { path, source }
    }
}
