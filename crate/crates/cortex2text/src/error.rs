use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input")]
    NonFiniteInput,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("signal too short")]
    SignalTooShort,

    #[error("recording shorter than one analysis window")]
    RecordingTooShort,

    #[error("rank deficient: requested components exceed spectrum")]
    RankDeficient,

    #[error("query with no attendable keys")]
    NoAttendableKeys,

    #[error("unknown token id {0}")]
    UnknownTokenId(u32),

    #[error("out-of-vocabulary word: {0}")]
    OutOfVocabulary(String),

    #[error("sequence length {got} exceeds maximum {max}")]
    SequenceTooLong { got: usize, max: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid recording: {0}")]
    InvalidRecording(String),

    #[error("corpus too small: {got} utterances, need at least {min}")]
    CorpusTooSmall { got: usize, min: usize },

    #[error("empty transcript")]
    EmptyTranscript,

    #[error("empty reference")]
    EmptyReference,

    #[error("utterance {id}: {source}")]
    Utterance {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("training diverged (non-finite loss) at epoch {epoch}, batch {batch}")]
    TrainingDiverged { epoch: usize, batch: usize },

    #[error("exhaustive decode guard exceeded: {sequences} sequences > {limit}")]
    ExhaustiveGuard { sequences: u64, limit: u64 },

    #[error("word signature collision between {0:?} and {1:?}")]
    SignatureCollision(String, String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("missing artifact: {path} ({hint})")]
    MissingArtifact { path: String, hint: String },

    #[error("malformed file {path}: {detail}")]
    MalformedFile { path: String, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach an utterance id to an error while aggregating over a corpus.
    pub fn for_utterance(self, id: impl Into<String>) -> Self {
        Error::Utterance {
            id: id.into(),
            source: Box::new(self),
        }
    }
}
