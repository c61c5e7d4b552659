//! Error type shared across the crate.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("malformed CSV in {path}: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("invalid raster: {0}")]
    InvalidRaster(String),

    #[error("header/payload size mismatch: expected {expected} values, payload holds {actual}")]
    PayloadSizeMismatch { expected: usize, actual: usize },

    #[error("invalid site table: {0}")]
    InvalidSites(String),

    #[error("out of bounds: {0}")]
    OutOfBounds(String),

    #[error("missing band {0:?}")]
    MissingBand(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("annulus {annulus} has no valid pixels at site {site_id:?} (band {band:?})")]
    EmptyAnnulus {
        site_id: String,
        band: String,
        annulus: usize,
    },

    #[error("both classes must be present, got a single class")]
    SingleClass,

    #[error("constraint infeasible: {0}")]
    Infeasible(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        site_ids: Vec<String>,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Wrap an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Error {
        let site_ids = self.site_ids();
        Error::Stage {
            stage,
            site_ids,
            source: Box::new(self),
        }
    }

    /// Site ids implicated in this error, if any.
    pub fn site_ids(&self) -> Vec<String> {
        match self {
            Error::EmptyAnnulus { site_id, .. } => vec![site_id.clone()],
            Error::Stage { site_ids, .. } => site_ids.clone(),
            _ => Vec::new(),
        }
    }

    /// Machine-readable representation, used by the CLI on stderr.
    pub fn to_json(&self) -> serde_json::Value {
        let stage = match self {
            Error::Stage { stage, .. } => Some(*stage),
            _ => None,
        };
        serde_json::json!({
            "error": {
                "stage": stage,
                "message": self.to_string(),
                "site_ids": self.site_ids(),
            }
        })
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
