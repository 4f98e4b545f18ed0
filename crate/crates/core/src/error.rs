use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
///
/// The variants map onto the CLI exit-code classes: configuration problems
/// (`Config`, `Shape`, `MissingArtifact`, `UnknownKey`) are caller mistakes, the
/// rest are runtime failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing artifact: {what} (expected at {path})")]
    MissingArtifact { what: String, path: PathBuf },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("invalid token id {id} (vocabulary size {vocab})")]
    TokenOutOfRange { id: usize, vocab: usize },

    #[error("bad checkpoint magic")]
    BadMagic,

    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u8),

    #[error("checkpoint checksum mismatch (stored {stored:#018x}, computed {computed:#018x})")]
    Checksum { stored: u64, computed: u64 },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("undefined metric: {0}")]
    Undefined(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input or configuration rather than a
    /// failure while running.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Shape(_)
                | Error::MissingArtifact { .. }
                | Error::TokenOutOfRange { .. }
        )
    }
}
