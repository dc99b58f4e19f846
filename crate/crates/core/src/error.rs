use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },
    #[error("communication graph is not connected")]
    DisconnectedGraph,
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("matrix is not positive definite (smallest eigenvalue {0:e})")]
    NotPositiveDefinite(f64),
    #[error("linear system is singular or ill-conditioned (condition estimate {0:e})")]
    SingularSystem(f64),
    #[error("game is not strongly monotone (smallest symmetric eigenvalue {0:e})")]
    NotStronglyMonotone(f64),
    #[error("weight estimate violates the norm cap: trace(W^T W) = {trace} > {w_max}")]
    CapViolated { trace: f64, w_max: f64 },
    #[error("player {player} is not a {expected} player")]
    WrongOrder {
        player: usize,
        expected: &'static str,
    },
    #[error("non-finite derivative at state component {component}")]
    NonFiniteDerivative { component: usize },
    #[error("state blew up at t = {t}: component {component} = {value}")]
    NonFiniteState {
        t: f64,
        component: usize,
        value: f64,
    },
    #[error("no known equilibrium for this game")]
    NoKnownEquilibrium,
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
