use std::path::PathBuf;

use thiserror::Error;

/// Broad failure class, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad input data or configuration.
    Validation,
    /// A numerical stage could not produce a result.
    Numerical,
    /// Filesystem or serialization trouble.
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("no records in input")]
    NoRecords,

    #[error("{count} position(s) outside the domain: rows {rows:?}")]
    OutOfDomain { count: usize, rows: Vec<usize> },

    #[error("times are not monotone: row {row} has t = {time} after t = {previous}")]
    Ordering { row: usize, time: f64, previous: f64 },

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("incompatible inputs: {0}")]
    Incompatible(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("non-finite density value in frame {frame}")]
    NonFinite { frame: usize },

    #[error("rank-deficient design matrix; dependent columns {columns:?}")]
    RankDeficient { columns: Vec<usize> },

    #[error("simulation produced a non-finite state at step {step}")]
    SimulationBlowup { step: usize },

    #[error("undefined metric: {0}")]
    Undefined(String),

    #[error("{stage} failed for group `{group}`: {source}")]
    Stage {
        stage: &'static str,
        group: String,
        #[source]
        source: Box<Error>,
    },

    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Schema(_)
            | Error::NoRecords
            | Error::OutOfDomain { .. }
            | Error::Ordering { .. }
            | Error::Invalid(_)
            | Error::Incompatible(_)
            | Error::InsufficientData(_)
            | Error::TomlDe(_)
            | Error::Csv(_) => ErrorClass::Validation,
            Error::Singular(_)
            | Error::NonFinite { .. }
            | Error::RankDeficient { .. }
            | Error::SimulationBlowup { .. }
            | Error::Undefined(_) => ErrorClass::Numerical,
            Error::Stage { source, .. } => source.class(),
            Error::MissingArtifact(_) | Error::Io(_) | Error::Json(_) => ErrorClass::Io,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str, group: &str) -> Self {
        Error::Stage {
            stage,
            group: group.to_owned(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
