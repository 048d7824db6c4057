use std::path::{Path, PathBuf};

use airway_core::error::{AirwayError, MeshError, MetricsError, RenderError};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {msg}{}", path.display(), offset.map(|o| format!(" (at byte {o})")).unwrap_or_default())]
    Format {
        path: PathBuf,
        offset: Option<u64>,
        msg: String,
    },
    #[error("bundle rejected:\n  {}", .0.join("\n  "))]
    Ingestion(Vec<String>),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("mesh failed validation: {0}")]
    InvalidMesh(String),
    #[error(transparent)]
    Airway(#[from] AirwayError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn format(path: impl AsRef<Path>, offset: Option<u64>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.as_ref().to_path_buf(),
            offset,
            msg: msg.into(),
        }
    }

    /// Process exit code: 1 usage, 2 validation, 3 I/O and runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Airway(AirwayError::InvalidParam { .. }) | Error::Mesh(MeshError::InvalidParam { .. }) => 1,
            Error::Render(RenderError::InvalidCamera(_)) => 1,
            Error::Ingestion(_) | Error::InvalidMesh(_) | Error::Format { .. } => 2,
            Error::Airway(_) | Error::Mesh(_) | Error::Render(_) | Error::Metrics(_) => 2,
            Error::Io { .. } => 3,
        }
    }
}
