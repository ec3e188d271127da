use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown experiment id `{0}` (see `svsa list`)")]
    UnknownExperiment(String),

    #[error("experiment `{0}` is stochastic and needs a seed")]
    MissingSeed(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("cannot parse {path}: {source}")]
    Toml {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },

    #[error("invalid parameters for `{id}`: {source}")]
    Params {
        id: String,
        #[source]
        source: toml::de::Error,
    },

    #[error("bad seed range `{0}`, expected a..b")]
    SeedRange(String),

    #[error("{0}")]
    Verify(String),

    #[error(transparent)]
    Core(#[from] svsa_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    /// Errors caused by the configuration rather than by a run.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            HarnessError::UnknownExperiment(_)
                | HarnessError::MissingSeed(_)
                | HarnessError::Config(_)
                | HarnessError::Toml { .. }
                | HarnessError::Params { .. }
                | HarnessError::SeedRange(_)
        )
    }
}
