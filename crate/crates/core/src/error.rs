use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    #[error("manifest error at line {line} (utt_id={utt_id}, field={field}): {message}")]
    Manifest {
        line: usize,
        utt_id: String,
        field: String,
        message: String,
    },

    #[error("checkpoint version mismatch: file has version {found}, this build supports version {supported}")]
    Version { found: u32, supported: u32 },

    #[error("freeze violation after epoch {epoch}: acoustic hash {before} changed to {after}")]
    FreezeViolation {
        epoch: usize,
        before: String,
        after: String,
    },

    #[error("training failure at step {step}: {message}")]
    TrainingFailure { step: usize, message: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Short machine-readable kind, used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Format(_) => "format",
            Error::DegenerateInput(_) => "degenerate_input",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::InvariantViolation(_) => "invariant_violation",
            Error::Manifest { .. } => "manifest",
            Error::Version { .. } => "version",
            Error::FreezeViolation { .. } => "freeze_violation",
            Error::TrainingFailure { .. } => "training_failure",
            Error::Stage { source, .. } => source.kind(),
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
