use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: [usize; 2],
        rhs: [usize; 2],
    },

    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot([usize; 2]),

    #[error("at least one anchor is required")]
    NoAnchors,

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("loss diverged at iteration {iteration} (loss = {loss:e})")]
    Diverged { iteration: usize, loss: f64 },

    #[error("rejection sampling exhausted after {attempts} attempts ({accepted} of {requested} points accepted); valid space is too small")]
    SamplingExhausted {
        attempts: usize,
        accepted: usize,
        requested: usize,
    },

    #[error("no feasible vertex sequence at timestep {timestep}; try a larger n_samples")]
    InfeasibleProjection { timestep: usize },

    #[error("exact path TSP supports at most {max} waypoints, got {got}")]
    TooManyWaypoints { max: usize, got: usize },

    #[error("at least {needed} time-known anchors required, got {got}")]
    NotEnoughTimeKnownAnchors { needed: usize, got: usize },

    #[error("infeasible scenario: {0}")]
    InfeasibleScenario(String),

    #[error("invalid session: {}", .0.join("; "))]
    InvalidSession(Vec<String>),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the computation itself (as opposed to bad input).
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self,
            Error::InfeasibleProjection { .. }
                | Error::SamplingExhausted { .. }
                | Error::InfeasibleScenario(_)
                | Error::NonFiniteLoss { .. }
                | Error::Diverged { .. }
        )
    }
}
