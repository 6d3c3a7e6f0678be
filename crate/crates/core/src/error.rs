use std::path::PathBuf;

/// Errors raised by the laboratory.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A computation would exceed a configured memory or size ceiling.
    #[error("resource limit exceeded: {what} needs {requested}, ceiling is {limit}")]
    ResourceLimit {
        what: &'static str,
        requested: u64,
        limit: u64,
    },
    /// The prime table passed in does not reach far enough.
    #[error("prime table reaches {have}, but {need} is required")]
    TableTooSmall { need: u64, have: u64 },
    #[error("cannot factor {n} within the trial-division budget")]
    FactorizationBudget { n: u64 },
    #[error("table spec has no value for prime power {0}")]
    MissingTableEntry(u64),
    #[error("search for K(eps) did not terminate below {horizon}: g(horizon) = {g} > eps = {eps}")]
    UnboundedSearch { horizon: u64, g: f64, eps: f64 },
    #[error("hypothesis violated: {0}")]
    HypothesisViolation(String),
    #[error("atom explosion: {atoms} atoms exceed the budget of {budget}; raise the resolution or use Monte Carlo")]
    AtomExplosion { atoms: usize, budget: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("parse error in {}: {msg}", path.display())]
    Parse { path: PathBuf, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Resource and budget failures, as opposed to bad input.
    pub fn is_resource(&self) -> bool {
        matches!(
            self,
            Error::ResourceLimit { .. }
                | Error::TableTooSmall { .. }
                | Error::FactorizationBudget { .. }
                | Error::UnboundedSearch { .. }
                | Error::AtomExplosion { .. }
        )
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
