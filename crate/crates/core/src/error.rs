use thiserror::Error;

/// Errors surfaced by solvers, simulators and checks.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter is outside the domain an operation requires.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The closed-form time coefficient would turn negative somewhere on [0, T].
    #[error("ill-posed: {0}")]
    IllPosed(String),

    /// Effective wealth is non-positive at the queried state.
    #[error("insolvent state: {0}")]
    Insolvent(String),

    /// The mandatory bequest exceeds initial effective wealth.
    #[error("infeasible bequest: {0}")]
    InfeasibleBequest(String),

    /// The no-trade boundaries are crossed or a denominator is non-positive.
    #[error("degenerate band: {0}")]
    DegenerateBand(String),

    /// The instance does not fit the requested problem (wrong costs/income/bequest).
    #[error("unsupported instance: {0}")]
    Unsupported(String),

    /// The explicit scheme would exceed its sub-stepping budget.
    #[error("unstable: {0}")]
    Unstable(String),

    /// A cross-verification check found values that do not agree.
    #[error("disagreement: {0}")]
    Disagreement(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
