use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors surfaced by every stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller supplied something unusable (bad media, empty text, out-of-range parameter).
    #[error("invalid input: {0}")]
    Input(String),

    /// A remote backend could not be reached or kept failing after retries.
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("prompt of ~{estimated} tokens exceeds the {budget}-token context budget by {overflow} tokens")]
    Budget {
        estimated: usize,
        budget: usize,
        overflow: usize,
    },

    /// A backend answered, but the answer did not have the expected shape.
    #[error("could not parse model output: {message}")]
    Parse { message: String, raw: String },

    #[error("generation failed: {0}")]
    Generation(String),

    #[error(
        "persona index is stale: built with `{built_with}`, configured `{configured}`; rebuild it"
    )]
    StaleIndex {
        built_with: String,
        configured: String,
    },

    #[error("{0} not found")]
    NotFound(String),

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("pipeline failed at {stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("panel {panel_index}: {source}")]
    Panel {
        panel_index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("integrity violation: {0}")]
    Integrity(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn at_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, looking through stage and panel wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } | Error::Panel { source, .. } => source.root(),
            other => other,
        }
    }
}
