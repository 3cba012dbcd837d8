use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid range: {0}")]
    InvalidRange(String),

    #[error("step index {t} out of range 1..={steps}")]
    StepOutOfRange { t: usize, steps: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("embedding width must be even, got {0}")]
    OddEmbeddingWidth(usize),

    #[error("invalid label {label}; classifier declares {classes} classes")]
    InvalidLabel { label: usize, classes: usize },

    #[error("topology mismatch: {0}")]
    TopologyMismatch(String),

    #[error("backward called without a recorded training-mode forward pass")]
    BackwardWithoutForward,

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value at diffusion step {t}")]
    NonFinite { t: usize },

    #[error("non-finite training loss at step {step} (t values drawn: {ts:?})")]
    NonFiniteLoss { step: u64, ts: Vec<usize> },

    #[error("signal too short: {len} samples, need at least {min}")]
    SignalTooShort { len: usize, min: usize },

    #[error("degenerate normalization stats: min {min} must be < max {max}")]
    DegenerateStats { min: f64, max: f64 },

    #[error("unknown dataset kind `{0}`")]
    UnknownDatasetKind(String),

    #[error("{}: bad magic {found:?}, expected {expected:?}", path.display())]
    BadMagic {
        path: PathBuf,
        expected: [u8; 4],
        found: [u8; 4],
    },

    #[error("{}: unsupported version {found}, expected {expected}", path.display())]
    VersionMismatch {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("{}: truncated payload ({detail})", path.display())]
    Truncated { path: PathBuf, detail: String },

    #[error("duplicate tensor name `{0}`")]
    DuplicateTensor(String),

    #[error("missing tensor `{0}`")]
    MissingTensor(String),

    #[error("config line {line}: {msg}")]
    ConfigLine { line: usize, msg: String },

    #[error("unsupported audio: {0}")]
    Audio(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: impl std::fmt::Display, got: impl std::fmt::Display) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// True for errors caused by the filesystem rather than by bad input.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::BadMagic { .. }
                | Error::VersionMismatch { .. }
                | Error::Truncated { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
