use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point at z = {z} lies behind the camera cutoff")]
    DepthBehindCamera { z: f64 },
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("linear system has no valid observations")]
    EmptySystem,
    #[error("reduced pose system is singular after damping")]
    SingularSystem,
    #[error("damping exceeded {limit:e} without an acceptable step")]
    MaxDampingExceeded { limit: f64 },
    #[error("keyframe {0} has no neighbors")]
    NoNeighbors(usize),
    #[error("need at least 3 associated pose pairs, found {0}")]
    TooFewPairs(usize),
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}:{line}: quaternion norm {norm} is not unit")]
    NonUnitQuaternion {
        path: String,
        line: usize,
        norm: f64,
    },
    #[error("unknown preset '{0}'")]
    UnknownPreset(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("graph invariant violated: {0}")]
    Graph(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable machine-readable code, printed as the prefix of CLI error lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DepthBehindCamera { .. } => "E_CHEIRALITY",
            Error::NonPositiveDepth(_) => "E_DEPTH",
            Error::EmptySystem => "E_EMPTY_SYSTEM",
            Error::SingularSystem => "E_SINGULAR",
            Error::MaxDampingExceeded { .. } => "E_DAMPING",
            Error::NoNeighbors(_) => "E_NO_NEIGHBORS",
            Error::TooFewPairs(_) => "E_TOO_FEW_PAIRS",
            Error::EmptyCloud => "E_EMPTY_CLOUD",
            Error::Parse { .. } => "E_PARSE",
            Error::NonUnitQuaternion { .. } => "E_QUATERNION",
            Error::UnknownPreset(_) => "E_PRESET",
            Error::Config(_) => "E_CONFIG",
            Error::Graph(_) => "E_GRAPH",
            Error::Io { .. } => "E_IO",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
