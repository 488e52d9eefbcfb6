use thiserror::Error;

/// Errors raised by the estimation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("degenerate instrument: every row has z = {0}")]
    DegenerateInstrument(u8),

    #[error("no affected units: total affected-stratum mass is zero")]
    NoAffectedUnits,

    #[error("empty subgroup: {0}")]
    EmptySubgroup(String),

    #[error("rank deficient design: column `{0}` is collinear with earlier columns")]
    RankDeficient(String),

    #[error("did not converge after {0} iterations")]
    NonConvergence(usize),

    #[error("non-finite likelihood at iteration {iteration}, row {row}")]
    NonFinite { iteration: usize, row: usize },

    #[error("transport assumptions not asserted: PATE requires conditional transportability and included support")]
    TransportNotAsserted,

    #[error("degenerate simulation: {0}")]
    DegenerateSimulation(String),

    #[error("missing cluster for row {0}")]
    MissingCluster(usize),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}
