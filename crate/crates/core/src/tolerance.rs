use serde::{Deserialize, Serialize};

/// Absolute slack allowed on supply constraints.
pub const TOL_FEAS: f64 = 1e-9;
/// KKT residual target for the CES solver, relative to `max(1, s_j)`.
pub const TOL_KKT: f64 = 1e-7;
/// Multipliers at or below this are treated as zero prices.
pub const TOL_DUAL: f64 = 1e-8;
/// Relative tolerance for equilibrium equalities, against `max(1, s_j)`.
pub const TOL_EQ: f64 = 1e-6;
/// Positive bids at or below this collapse to `Bid::Zero`.
pub const TOL_BID: f64 = 1e-12;
/// Utility-scale tolerance of the best-response oracle.
pub const TOL_BR: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub feas: f64,
    pub kkt: f64,
    pub dual: f64,
    pub eq: f64,
    pub br: f64,
    pub max_iterations: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            feas: TOL_FEAS,
            kkt: TOL_KKT,
            dual: TOL_DUAL,
            eq: TOL_EQ,
            br: TOL_BR,
            max_iterations: MAX_ITERATIONS,
        }
    }
}
