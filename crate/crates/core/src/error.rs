use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // volumes
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    // scoring
    #[error("lesion mask is empty")]
    EmptyLesion,
    #[error("boundary band is empty")]
    EmptyBand,
    #[error("input list is empty")]
    EmptyInput,
    #[error("every sample in the dataset has an empty lesion")]
    AllSamplesEmpty,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    // replay buffer
    #[error("no valid scored samples to select from")]
    NoValidSamples,
    #[error("episode {new} does not follow the latest stored episode {latest}")]
    NonMonotonicEpisode { latest: u32, new: u32 },
    #[error("replay buffer is empty")]
    BufferEmpty,
    #[error("requested {k} entries but the buffer holds {available}")]
    KTooLarge { k: usize, available: usize },
    #[error("unsupported schema version {found} for {document} (expected {expected})")]
    SchemaMismatch {
        document: &'static str,
        found: u64,
        expected: u64,
    },
    #[error("corrupt state: {0}")]
    CorruptState(String),

    // modality
    #[error("cannot shrink input channels from {from} to {to}")]
    ShrinkNotAllowed { from: usize, to: usize },
    #[error("modality {0:?} is not registered in the channel layout")]
    UnregisteredModality(String),
    #[error("no modalities available to mask")]
    EmptyAvailable,

    // attention
    #[error("model width {d} is not divisible by {heads} heads")]
    HeadDivisibility { d: usize, heads: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    // metrics
    #[error("result row {0} is incomplete")]
    IncompleteRow(usize),
    #[error("backward transfer needs at least two tasks")]
    SingleTask,
    #[error("length mismatch: {left} predictions vs {right} ground-truth masks")]
    LengthMismatch { left: usize, right: usize },
    #[error("nothing to evaluate")]
    Empty,

    // io
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unknown dtype code {0}")]
    BadDtype(u8),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("ndim {0} outside 1..=5")]
    NdimOutOfRange(u8),
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("duplicate sample id {0:?}")]
    DuplicateSampleId(String),
    #[error("sample {sample_id:?} references modality {modality:?} not listed by the episode")]
    UnknownModalityKey { sample_id: String, modality: String },
    #[error("manifest failed validation: {0}")]
    InvalidManifest(String),
    #[error("schema violation in {document}: {detail}")]
    SchemaViolation {
        document: &'static str,
        detail: String,
    },

    // harness
    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code: 3 for internal invariant breaches, 2 for anything
    /// wrong with the inputs (including unreadable files).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvariantViolation(_) => 3,
            _ => 2,
        }
    }
}
