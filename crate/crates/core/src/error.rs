use thiserror::Error;

/// Errors raised by the model, solver and I/O layers.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside the domain of a formula.
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    /// A numerical procedure failed (unbracketed root, non-finite value, ...).
    #[error("numerical error in {op}: {detail}")]
    Numerical { op: &'static str, detail: String },

    /// Task effectiveness dropped to or below the level the fatigued-drift
    /// formula can represent.
    #[error("fatigue exhaustion: task effectiveness {te} is not above {floor}")]
    FatigueExhaustion { te: f64, floor: f64 },

    /// Both likelihoods of an observed decision vanished.
    #[error("degenerate likelihoods for decision {decision}: P(dec|H1)={p1}, P(dec|H0)={p0}")]
    DegenerateLikelihood { decision: u8, p1: f64, p0: f64 },

    /// Scenario validation failed; every problem found is listed.
    #[error("invalid scenario:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    /// A simulation step failed; wraps the underlying error with its context.
    #[error("simulation aborted at t={time} during {event}: {source}")]
    Simulation {
        time: f64,
        event: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("trace format error: {0}")]
    Trace(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn numerical(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Numerical {
            op,
            detail: detail.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
