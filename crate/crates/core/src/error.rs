use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("instance must have at least one agent and one good")]
    Empty,
    #[error("supply of good {good} must be positive and finite, got {value}")]
    BadSupply { good: usize, value: f64 },
    #[error("agent {0} desires no goods")]
    EmptyDesiredSet(usize),
    #[error("agent {agent} refers to good {good}, but there are only {m} goods")]
    GoodOutOfRange { agent: usize, good: usize, m: usize },
    #[error("good {0} is not desired by any agent")]
    UndesiredGood(usize),
    #[error("agent index {index} out of range for {n} agents")]
    AgentOutOfRange { index: usize, n: usize },
    #[error("expected {expected} entries, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("quantity at ({agent}, {good}) must be finite and nonnegative, got {value}")]
    NegativeQuantity { agent: usize, good: usize, value: f64 },
    #[error("invalid rho {0}: finite values must be < 1 (use `1` for utilitarian)")]
    BadRho(f64),
    #[error("cannot parse rho from {0:?}")]
    RhoParse(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("solver did not converge after {iterations} iterations (KKT residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("rho = -inf must be solved with solve_maxmin")]
    UnsupportedRho,
    #[error("linear program is infeasible")]
    Infeasible,
    #[error("linear program is unbounded")]
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AtpError {
    #[error("agent {agent} violates the bid constraint: cost {cost} > 1")]
    InfeasibleBid { agent: usize, cost: f64 },
    #[error("bid matrix is {rows}x{cols}, expected {n}x{m}")]
    Shape { rows: usize, cols: usize, n: usize, m: usize },
    #[error("curve family has {got} curves, expected {expected}")]
    CurveCount { expected: usize, got: usize },
    #[error("invalid curve for good {good}: {reason}")]
    BadCurve { good: usize, reason: &'static str },
    #[error("bid must be finite and nonnegative, got {0}")]
    BadBid(f64),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EquilibriumError {
    #[error("input is not an equilibrium: {0}")]
    NotAnEquilibrium(String),
    #[error("internal error: equilibrium conditions hold but agent {agent} gains {gain:e} by deviating")]
    Disagreement { agent: usize, gain: f64 },
    #[error("scaling factors must be positive and finite ({0} given for good index)")]
    BadScale(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Atp(#[from] AtpError),
}
