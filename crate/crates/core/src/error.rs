use thiserror::Error;

/// Errors raised by the decoding engine and its file readers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{what}: line {line}: {msg}")]
    Parse {
        what: String,
        line: usize,
        msg: String,
    },

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("input shorter than one downsampled frame")]
    EmptyInput,

    #[error("numerical overflow in encoder")]
    EncoderOverflow,

    #[error("non-monotone block stream: state has seen {seen} blocks, context has {given}")]
    NonMonotoneBlocks { seen: usize, given: usize },

    #[error("ctc: {0}")]
    Ctc(String),

    #[error("table scorer: {0}")]
    Table(String),

    #[error("missing tensor `{0}`")]
    MissingTensor(String),

    #[error("beam collapse: every expansion scored -inf at step {step}")]
    BeamCollapse { step: usize },

    #[error("block stream ended before any block was received")]
    NoBlocks,

    #[error("session already finalized")]
    Finalized,

    #[error("invalid weight {name} = {value}: must lie in [0, 1]")]
    WeightOutOfRange { name: &'static str, value: f64 },

    #[error("distribution does not sum to one (sum = {0})")]
    NotNormalized(f64),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn parse(what: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            what: what.into(),
            line,
            msg: msg.into(),
        }
    }
}
