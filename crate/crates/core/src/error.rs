use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("k = {0} is not a power of two >= 2")]
    KNotPowerOfTwo(usize),
    #[error("k = {k} exceeds input length n = {n}")]
    KExceedsN { n: usize, k: usize },
    #[error("secret set has {got} elements, expected k = {k}")]
    SecretSize { got: usize, k: usize },
    #[error("secret index {index} outside 1..={n}")]
    SecretOutOfRange { index: usize, n: usize },
    #[error("duplicate secret index {0}")]
    DuplicateSecret(usize),
    #[error("stage {stage} outside 1..={depth}")]
    StageOutOfRange { stage: usize, depth: usize },
    #[error("layer {layer} outside 1..={depth}")]
    LayerOutOfRange { layer: usize, depth: usize },
    #[error("position {position} outside 0..{len}")]
    PositionOutOfRange { position: usize, len: usize },
    #[error("query position {0} has no allowed keys")]
    EmptyKeySet(usize),
    #[error("query position {query} is not written by the active layer of stage {stage}")]
    InactiveQuery { query: usize, stage: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("batch must contain at least one sample")]
    EmptyBatch,
    #[error("input bit {value} at position {position} is not +1 or -1")]
    NotABit { position: usize, value: i8 },
    #[error("non-finite logit {value} at layer {layer}, key {key}, query {query}")]
    NonFinite {
        layer: usize,
        key: usize,
        query: usize,
        value: f64,
    },
    #[error("non-finite loss at stage {0}")]
    NonFiniteLoss(usize),
    #[error("stage-{stage} batch shows a CoT value at padded position {position}")]
    PaddingViolation { stage: usize, position: usize },
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("link function violates `{property}`: {detail}")]
    Link { property: &'static str, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("invalid params file: {0}")]
    InvalidParams(String),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
