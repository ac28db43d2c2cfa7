use std::path::PathBuf;

/// Errors produced anywhere in the classification pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid json in {context}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("missing sidecar {0}")]
    MissingSidecar(PathBuf),
    #[error("payload length mismatch: expected {expected} voxels, found {found}")]
    PayloadLengthMismatch { expected: usize, found: usize },
    #[error("non-positive spacing {0:?}")]
    NonPositiveSpacing([f64; 3]),
    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("volume is already normalized")]
    AlreadyNormalized,
    #[error("volume must be normalized first")]
    NotNormalized,
    #[error("invalid normalization parameters: {0}")]
    InvalidNormalization(String),
    #[error("empty annotation list")]
    EmptyAnnotations,
    #[error("invalid suspicion code {0}")]
    InvalidSuspicionCode(i64),
    #[error("no binary mapping for Indeterminate")]
    NoBinaryMapping,
    #[error("invalid bounding box {0:?}")]
    InvalidBox([i64; 6]),
    #[error("bounding box {bbox:?} lies entirely outside volume of shape {shape:?}")]
    BoxOutsideVolume { bbox: [i64; 6], shape: [usize; 3] },
    #[error("box side {side} exceeds volume extent {extent} on axis {axis}")]
    BoxLargerThanVolume { axis: usize, side: i64, extent: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid class index {index} for {classes} classes")]
    InvalidClassIndex { index: usize, classes: usize },
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("roc auc undefined: only one class present")]
    SingleClass,
    #[error("empty prediction set")]
    EmptyPredictions,
    #[error("nodule {0} appears in more than one fold")]
    DuplicateNodule(String),
    #[error("{patients} patients cannot fill {folds} folds")]
    TooFewPatients { patients: usize, folds: usize },
    #[error("unknown scan {0}")]
    UnknownScan(String),
    #[error("malformed {kind} file: {detail}")]
    Format { kind: &'static str, detail: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}
