use thiserror::Error;

/// Errors raised by the numerical core and the scenario tooling.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid argument: {0}")]
    Usage(String),

    #[error("config error in `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("non-finite value produced by {0}")]
    NumericOverflow(String),

    #[error("control history queried at {theta} beyond current time {t_now}")]
    FutureQuery { theta: f64, t_now: f64 },

    #[error("control history queried at {theta}, which precedes the retained window starting at {start}")]
    HistoryTrimmed { theta: f64, start: f64 },

    #[error("predictor escaped at x = {x}")]
    PredictorEscape { x: f64 },

    #[error("transition matrix at node {node} is ill-conditioned (condition number {condition:e})")]
    IllConditioned { node: usize, condition: f64 },

    /// The implicit control sample `U(t) = κ(p̂(1, t))` did not settle.
    #[error("control fixed point did not converge at t = {t} (last change {change:e})")]
    NoConvergence { t: f64, change: f64 },

    #[error("blow-up at t = {t}: {reason}")]
    BlowUp {
        t: f64,
        state: Vec<f64>,
        reason: String,
    },

    #[error("missing data for residual evaluation: {0}")]
    MissingTriplet(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Failure class: `config`, `blow_up`, `numeric` or `io`.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config { .. } | Error::Usage(_) => "config",
            Error::BlowUp { .. } | Error::PredictorEscape { .. } => "blow_up",
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => "io",
            _ => "numeric",
        }
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
