use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("node count {0} is even; the delta node at x = 0 would be missed")]
    EvenN(usize),
    #[error("node count {0} is below the minimum of 3")]
    TooFewNodes(usize),
    #[error("half width must be positive, got {0}")]
    NonPositiveL(f64),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("delta coupling must be nonzero")]
    ZeroCoupling,
    #[error("grid has no node at x = 0")]
    NoCenterNode,
    #[error("coupling q = {0} is not trapping; no bound state exists")]
    NonTrapping(f64),
    #[error("iteration did not converge after {iterations} steps (last change {last_change:.3e})")]
    NoConvergence { iterations: usize, last_change: f64 },
    #[error("linear solve failed: {0}")]
    SolveFailure(String),

    #[error("argument must be nonnegative, got {0}")]
    NegativeArgument(f64),
    #[error("rho = {0} outside the admissible range")]
    RhoOutOfRange(f64),
    #[error("invalid nonlinearity: {0}")]
    InvalidNonlinearity(String),

    #[error("profile iteration diverged at rho = {rho} (contraction estimate {factor:.3})")]
    ProfileDiverged { rho: f64, factor: f64 },
    #[error("amplitude |z| = {0} exceeds the admissible bound")]
    AmplitudeTooLarge(f64),
    #[error("beta = {0} must exceed 1/2")]
    BetaTooSmall(f64),
    #[error("cubic closed form requires p = 1, lambda = -1 and q = 1")]
    OracleUnavailable,

    #[error("field norm {norm:.3e} exceeds the decomposition threshold {threshold:.3e}")]
    TooLarge { norm: f64, threshold: f64 },
    #[error("Newton iteration diverged (|F| = {0:.3e})")]
    NewtonDiverged(f64),
    #[error("determinant D(z) = {0:.3e} is degenerate")]
    DegenerateD(f64),
    #[error("field is not in the range of P_c (leakage {0:.3e})")]
    NotProjected(f64),

    #[error("virial scale A = {0} must be at least 4")]
    ATooSmall(f64),

    #[error("invalid evolution configuration: {0}")]
    InvalidConfig(String),
    #[error("observer failure at t = {t}: {message}")]
    ObserverFailure { t: f64, message: String },

    #[error("this experiment needs p > 1/2, got p = {0}")]
    RequiresP(f64),
    #[error("dispersion requires q < 0 and a defocusing nonlinearity")]
    WrongSign,
    #[error("modulation decomposition lost at t = {0}")]
    DecompositionLost(f64),
    #[error("need at least {needed} snapshots, have {have}")]
    InsufficientSnapshots { needed: usize, have: usize },

    #[error("io error: {0}")]
    Io(String),
    #[error("serialization error: {0}")]
    Serialization(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}
