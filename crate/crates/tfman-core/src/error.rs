use std::path::PathBuf;

/// Error type shared by every module in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid model or operation configuration (shape mismatches, bad
    /// hyperparameters, unsupported scale factors).
    #[error("configuration error: {0}")]
    Config(String),

    /// An operation was called in a way its contract forbids (non-scalar
    /// backward, mismatched metric extents, patch larger than image).
    #[error("usage error: {0}")]
    Usage(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },

    /// Checkpoint file does not start with the expected magic bytes.
    #[error("checkpoint {path}: bad magic")]
    CheckpointBadMagic { path: PathBuf },

    /// Checkpoint version is newer than this build understands.
    #[error("checkpoint {path}: unsupported version {version}")]
    CheckpointVersion { path: PathBuf, version: u32 },

    /// Checkpoint ended before all declared tensor data was read.
    #[error("checkpoint {path}: truncated while reading {what}")]
    CheckpointTruncated { path: PathBuf, what: String },

    /// Checkpoint parsed but its contents do not match the model it claims
    /// to describe (unknown parameter name, wrong shape, bad config line).
    #[error("checkpoint {path}: {message}")]
    CheckpointInvalid { path: PathBuf, message: String },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
