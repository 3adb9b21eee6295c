use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: cannot read config: {source}")]
    ConfigIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config line {line}: {message}")]
    ConfigSyntax { line: usize, message: String },
    #[error("config line {line}: unknown key `{key}`")]
    ConfigUnknownKey { line: usize, key: String },
    #[error("{}invalid value for `{key}`: {message}", line.map(|l| format!("config line {l}: ")).unwrap_or_default())]
    ConfigRange {
        line: Option<usize>,
        key: String,
        message: String,
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("unknown feature layer `{0}`")]
    UnknownLayer(String),
    #[error(
        "encoder backend unavailable: {0} (pass `--backend stub` for the offline stand-in, or supply the weight files)"
    )]
    BackendUnavailable(String),
    #[error("non-finite value in loss term `{term}`{}", iteration.map(|i| format!(" at iteration {i}")).unwrap_or_default())]
    NonFinite { term: String, iteration: Option<usize> },
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (this build reads version {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checksum mismatch: file is corrupt or truncated")]
    Checksum,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
