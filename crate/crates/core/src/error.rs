use thiserror::Error;

/// Errors raised by the model, the simulator and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid market inputs: {0}")]
    InvalidInputs(String),

    #[error("drift regime not supported: reduced drift mu = {mu} must be > 0")]
    DriftRegime { mu: f64 },

    #[error("degenerate geometry: alpha = {alpha}, epsilon = {epsilon} (both must be > 0)")]
    DegenerateGeometry { alpha: f64, epsilon: f64 },

    #[error("invalid law of xi: {0}")]
    InvalidLaw(String),

    #[error("state at or above the breakout level: x = {x}, epsilon = {epsilon}")]
    AtBreakout { x: f64, epsilon: f64 },

    #[error("invalid simulation config: {0}")]
    InvalidSimConfig(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("grid length mismatch: path has {path} steps, expected {expected}")]
    GridMismatch { path: usize, expected: usize },

    #[error("invalid experiment: {0}")]
    InvalidExperiment(String),

    #[error("rejection oracle infeasible: acceptance rate {0:.3e} < 1e-4")]
    OracleInfeasible(f64),
}

pub type Result<T> = std::result::Result<T, Error>;
