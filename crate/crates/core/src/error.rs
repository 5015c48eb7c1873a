use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{what} did not converge within {terms} terms")]
    NonConvergent { what: &'static str, terms: usize },

    #[error("one-count map annihilates the state (vacuum only)")]
    VacuumOnly,

    #[error("conditioning event has zero probability")]
    ZeroProbability,

    #[error("{what}: exact forms disagree ({a} vs {b})")]
    Inconsistent { what: &'static str, a: f64, b: f64 },

    #[error("no closed form for state family {0}")]
    UnsupportedFamily(String),

    #[error("brute-force construction supports k <= {max}, got k = {k}")]
    UnsupportedOrder { k: usize, max: usize },

    #[error("integrator step-halving criterion failed at h = {h}")]
    StepTooLarge { h: f64 },

    #[error("conditioned state mass {mass:.3e} at the truncation edge exceeds budget")]
    TruncationExhausted { mass: f64 },

    #[error("only {got} conditioned samples, need at least {need}")]
    InsufficientSamples { got: usize, need: usize },

    #[error("trajectory {index}: {source}")]
    Trajectory {
        index: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
