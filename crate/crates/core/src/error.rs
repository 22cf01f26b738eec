use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("topic {topic} has no novel word")]
    NotSeparable { topic: usize },

    #[error("degenerate prior: {0}")]
    DegeneratePrior(String),

    #[error("word {word} has zero probability under the prior mean")]
    DegenerateWord { word: usize },

    #[error("prior is simplicial (distance {distance:.3e}); no convex certificate exists")]
    SimplicialPrior { distance: f64 },

    #[error("scale too large: component {component} of b1 + b2 is {value} >= 1")]
    ScaleTooLarge { component: usize, value: f64 },

    #[error("min-norm-point solver did not converge after {iterations} iterations (gap {gap:.3e})")]
    SolverFailure { iterations: usize, gap: f64 },

    #[error("normalized correlation is not simplicial (gamma {gamma:.3e}, row {row})")]
    NotSimplicial { gamma: f64, row: usize },

    #[error("incomplete recovery: found {} of {wanted} novel words", .partial.len())]
    IncompleteRecovery { partial: Vec<usize>, wanted: usize },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("shard {shard_id} is missing")]
    ShardMissing { shard_id: u16 },

    #[error("protocol version mismatch: expected {expected}, got {got}")]
    VersionMismatch { expected: u16, got: u16 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Validation-class errors, as opposed to numerical or recovery failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Dimension(_)
                | Error::InvalidInput(_)
                | Error::NotSeparable { .. }
                | Error::DegeneratePrior(_)
                | Error::DegenerateWord { .. }
                | Error::ScaleTooLarge { .. }
                | Error::Parse { .. }
                | Error::Io(_)
                | Error::Json(_)
                | Error::Protocol(_)
                | Error::ShardMissing { .. }
                | Error::VersionMismatch { .. }
        )
    }
}
