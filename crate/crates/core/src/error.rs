use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate heading: |(sin, cos)| = {norm:e}")]
    DegenerateHeading { norm: f64 },

    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("scenario infeasible: {0}")]
    InfeasibleScenario(String),

    #[error("horizon overrun: frame {requested} requested, scenario has {duration} frames")]
    HorizonOverrun { requested: usize, duration: usize },

    #[error("non-contiguous frame: expected index {expected}, got {got}")]
    NonContiguousFrame { expected: i64, got: i64 },

    #[error("insufficient history: window needs frames {first}..={last}, queue holds {held}")]
    InsufficientHistory { first: i64, last: i64, held: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty ground truth")]
    EmptyGroundTruth,

    #[error("loss became non-finite at step {step}: {detail}")]
    NaNLoss { step: usize, detail: String },

    #[error("missing checkpoint: {}", .0.display())]
    MissingCheckpoint(PathBuf),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what}: {reason}")]
    Parse { what: String, reason: String },
}

impl Error {
    pub fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the filesystem rather than by bad inputs.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::MissingCheckpoint(_))
    }
}
