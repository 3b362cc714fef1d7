use std::path::PathBuf;

use crate::dynamics::Trajectory;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("state norm {norm:.3e} exceeded blow-up bound at t = {time}")]
    Divergence {
        time: f64,
        norm: f64,
        partial: Box<Trajectory>,
    },

    #[error("integration stalled at t = {time}: {reason}")]
    Stalled {
        time: f64,
        reason: String,
        partial: Option<Box<Trajectory>>,
    },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("degenerate sampling: {0}")]
    DegenerateSampling(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("eigenvalue {index} has modulus {modulus:.3e}; its logarithm is singular")]
    LogSingularity { index: usize, modulus: f64 },

    #[error("eigenvector basis condition number {condition:.3e} exceeds {limit:.1e}")]
    IllConditionedBasis { condition: f64, limit: f64 },

    #[error(
        "input field leaves the dictionary span: term of degree {degree} exceeds max degree {max}; \
         use the least-squares B estimate instead"
    )]
    SpanViolation { degree: u32, max: u32 },

    #[error("index {index} out of range for {len} entries")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("model error: {0}")]
    Model(String),

    #[error("design failure after {attempts} attempts: {details}")]
    Design { attempts: usize, details: String },

    #[error("missing artifact {}", .0.display())]
    Dependency(PathBuf),

    #[error("failed to parse {what}: {message}")]
    Parse { what: String, message: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn in_stage(self, stage: &'static str) -> Error {
        match self {
            Error::Stage { .. } => self,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// Innermost error, skipping stage attribution.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit status used by `koopctl`.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Config(_) | Error::Validation(_) | Error::Parse { .. } => 2,
            Error::Dependency(_) | Error::Io(_) => 2,
            _ => 3,
        }
    }
}
