use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("missing key: {0}")]
    Key(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("training diverged in {term}: {detail}")]
    Training { term: String, detail: String },

    #[error("transfer error at {path}: {detail}")]
    Transfer { path: String, detail: String },

    #[error("checkpoint format error in {section}: {detail}")]
    Format { section: String, detail: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn format(section: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format {
            section: section.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn transfer(path: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Transfer {
            path: path.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn training(term: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Training {
            term: term.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
