use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("rate `{0}` must be positive and finite")]
    RateNonpositive(&'static str),
    #[error("initial condition x0 must be nonnegative and finite")]
    InitialStateNegative,
    #[error("variational problems require lambda >= mu")]
    LambdaLessThanMu,
    #[error("many-server variational problems require x0 >= 1")]
    ManyServerX0TooSmall,
    #[error("horizon T must be positive and finite")]
    HorizonNonpositive,
    #[error("target rate gamma must be nonnegative and finite")]
    TargetInvalid,
    #[error("argument must be nonnegative, got {0}")]
    NegativeArgument(f64),
    #[error("boundary state x = 0 with positive reneging slope is infeasible")]
    BoundaryInfeasible,
    #[error("grid too coarse: need at least {needed} points, got {got}")]
    GridTooCoarse { needed: usize, got: usize },
    #[error("grid must be uniform and strictly increasing")]
    NonUniformGrid,
    #[error("path must start at a nonnegative value")]
    NegativeStart,
    #[error("operation requires the {0} server mode")]
    UnsupportedMode(&'static str),
    #[error("target rate gamma must be positive for the Euler-Lagrange construction")]
    GammaNonpositive,
    #[error("failed to bracket the tilt equation root: {0}")]
    BracketingFailed(String),
    #[error("optimality checks failed: {}", .0.join(", "))]
    OptimalityViolated(Vec<String>),
    #[error("horizon T must exceed x0 for the gamma = 0 path")]
    HorizonTooShort,
    #[error("optimizer did not converge after {iterations} iterations (objective {objective}, gradient-map norm {gradient_norm})")]
    NotConverged {
        iterations: usize,
        objective: f64,
        gradient_norm: f64,
    },
    #[error("controls must have positive phi1, phi2 and nonnegative phi3 covering [0, T]: {0}")]
    ControlNotPositive(String),
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("csv: {0}")]
    Csv(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}
