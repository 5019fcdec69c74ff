//! Bandwidth allocation with the augmented trading post.
//!
//! Agents require a fixed set of links (goods) and value a bundle by the
//! smallest quantity received on any required link. The crate provides:
//!
//! - [`model`]: instances, allocations, utilities and CES welfare.
//! - [`solver`]: CES welfare maximization with dual multipliers, plus the
//!   closed-form maxmin program.
//! - [`atp`]: the augmented trading post allocation rule (proportional
//!   shares, `beta` bids for free goods, over-claim penalty) under
//!   nonlinear bid constraints.
//! - [`equilibrium`]: Nash equilibrium and price curve equilibrium checks,
//!   conversions between the two, curve scaling, and the end-to-end
//!   equilibrium constructor for `ATP(rho)`.
//! - [`maxmin`]: the two revelation mechanisms for maxmin welfare and the
//!   counterexample demonstrations.

#![allow(clippy::needless_range_loop)]

pub mod atp;
pub mod equilibrium;
pub mod error;
pub mod generate;
mod lp;
pub mod maxmin;
pub mod model;
pub mod solver;
pub mod tolerance;

pub use atp::{atp_allocate, best_response, bid_cost, Bid, BidMatrix, CurveFamily, PowerCurve};
pub use equilibrium::{
    construct_atp_rho_equilibrium, pce_to_tp, scale_curves, tp_to_pce, transform_bids,
    verify_pce, verify_tp_ne, NeReport, PceReport,
};
pub use error::{AtpError, EquilibriumError, ModelError, SolverError};
pub use model::{ces_welfare, utility, Allocation, Instance, Rho};
pub use solver::{solve_ces, solve_maxmin, SolveResult};
pub use tolerance::Tolerances;
