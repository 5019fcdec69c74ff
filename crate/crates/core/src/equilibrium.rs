//! Equilibrium checks for the trading post and for price curve markets,
//! conversions between the two, and construction of optimal equilibria.
//!
//! A bid profile is a Nash equilibrium exactly when every agent's bundle is
//! proportional to its need on every good someone pays for, every agent
//! spends its whole budget, and nobody is wiped out by the over-claim penalty.
//! An agent that already receives the full supply of its scarcest good is
//! best-responding regardless, so it is exempt from the first two conditions.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::atp::{allocate_unchecked, atp_allocate, best_response, bid_cost, utility_with_row};
use crate::atp::{Bid, BidMatrix, CurveFamily, PowerCurve};
use crate::error::EquilibriumError;
use crate::model::{ces_welfare, Allocation, Instance, Rho};
use crate::solver::solve_ces_with;
use crate::tolerance::Tolerances;

/// Random deviations tried per agent by the sweep, on top of the best response.
pub const SWEEP_SAMPLES: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// The bids are not admissible at all.
    InvalidBids { reason: String },
    /// `x_ij != w_ij u_i` on a good with a positive bid (or a nonzero price).
    NotProportional { agent: usize, good: usize, allocated: f64, expected: f64 },
    /// Bid or bundle cost differs from the unit budget.
    BudgetNotExhausted { agent: usize, cost: f64 },
    /// The agent receives nothing.
    ZeroUtility { agent: usize },
    /// Demand on a good exceeds supply, or a priced good is not cleared.
    MarketNotCleared { good: usize, demand: f64, supply: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::InvalidBids { reason } => write!(f, "invalid bids: {reason}"),
            Violation::NotProportional { agent, good, allocated, expected } => write!(
                f,
                "agent {agent} receives {allocated} of good {good}, expected {expected}"
            ),
            Violation::BudgetNotExhausted { agent, cost } => {
                write!(f, "agent {agent} spends {cost} instead of 1")
            }
            Violation::ZeroUtility { agent } => write!(f, "agent {agent} has zero utility"),
            Violation::MarketNotCleared { good, demand, supply } => {
                write!(f, "good {good}: demand {demand} against supply {supply}")
            }
        }
    }
}

/// A profitable unilateral deviation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub agent: usize,
    pub bids: Vec<Bid>,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeReport {
    pub is_ne: bool,
    /// The proportionality, budget and positive-utility conditions hold for
    /// every agent, with no saturation exemption.
    pub lemma_conditions_hold: bool,
    pub violated_condition: Option<Violation>,
    pub deviation_witness: Option<Witness>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PceReport {
    pub is_pce: bool,
    pub violated_condition: Option<Violation>,
}

fn scale_tol(tol: f64, s: f64) -> f64 {
    tol * s.max(1.0)
}

pub fn verify_tp_ne(inst: &Instance, f: &CurveFamily, b: &BidMatrix) -> NeReport {
    verify_tp_ne_with(inst, f, b, &Tolerances::default())
}

/// Checks the equilibrium conditions (no deviation sweep).
pub fn verify_tp_ne_with(inst: &Instance, f: &CurveFamily, b: &BidMatrix, tol: &Tolerances) -> NeReport {
    let x = match atp_allocate(inst, f, b) {
        Ok(x) => x,
        Err(e) => {
            return NeReport {
                is_ne: false,
                lemma_conditions_hold: false,
                violated_condition: Some(Violation::InvalidBids { reason: e.to_string() }),
                deviation_witness: None,
            }
        }
    };
    let u = x.utilities(inst);

    // First violation per agent, ignoring saturation.
    let agent_violation = |i: usize| -> Option<Violation> {
        if u[i] <= 0.0 {
            return Some(Violation::ZeroUtility { agent: i });
        }
        for j in (0..inst.m()).filter(|&j| b.has_positive(j)) {
            let expected = inst.weight(i, j) * u[i];
            if (x.get(i, j) - expected).abs() > scale_tol(tol.eq, inst.supply(j)) {
                return Some(Violation::NotProportional {
                    agent: i,
                    good: j,
                    allocated: x.get(i, j),
                    expected,
                });
            }
        }
        let cost = bid_cost(f, b.row(i));
        if (cost - 1.0).abs() > tol.eq {
            return Some(Violation::BudgetNotExhausted { agent: i, cost });
        }
        None
    };

    let mut strict = true;
    let mut violated = None;
    for i in 0..inst.n() {
        if let Some(v) = agent_violation(i) {
            strict = false;
            let saturated = u[i] >= inst.max_utility(i) * (1.0 - tol.eq);
            if !saturated && violated.is_none() {
                violated = Some(v);
            }
        }
    }
    NeReport {
        is_ne: violated.is_none(),
        lemma_conditions_hold: strict,
        violated_condition: violated,
        deviation_witness: None,
    }
}

/// Condition check plus a deviation sweep: each agent's best response and
/// `SWEEP_SAMPLES` random feasible bid vectors. A gain above `tol.eq` is
/// recorded as a witness. If the conditions certify an equilibrium but the
/// sweep finds a gain, the checks disagree and an error is returned.
pub fn verify_tp_ne_swept(
    inst: &Instance,
    f: &CurveFamily,
    b: &BidMatrix,
    tol: &Tolerances,
    seed: u64,
) -> Result<NeReport, EquilibriumError> {
    let mut report = verify_tp_ne_with(inst, f, b, tol);
    if matches!(report.violated_condition, Some(Violation::InvalidBids { .. })) {
        return Ok(report);
    }
    if let Some(w) = deviation_sweep(inst, f, b, tol.eq, seed) {
        if report.is_ne {
            return Err(EquilibriumError::Disagreement {
                agent: w.agent,
                gain: w.gain,
            });
        }
        report.deviation_witness = Some(w);
    }
    Ok(report)
}

/// Largest unilateral gain above `threshold * max(1, u_i)`, if any.
pub fn deviation_sweep(inst: &Instance, f: &CurveFamily, b: &BidMatrix, threshold: f64, seed: u64) -> Option<Witness> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let current = allocate_unchecked(inst, b).utilities(inst);
    let mut best: Option<Witness> = None;
    let mut consider = |agent: usize, bids: Vec<Bid>, u: f64| {
        let gain = u - current[agent];
        if gain > threshold * current[agent].max(1.0) && best.as_ref().is_none_or(|w| gain > w.gain) {
            best = Some(Witness { agent, bids, gain });
        }
    };
    for i in 0..inst.n() {
        let (row, u) = best_response(inst, f, b, i);
        consider(i, row, u);
        for _ in 0..SWEEP_SAMPLES {
            let row = random_feasible_row(&mut rng, inst, f, i, true);
            let u = utility_with_row(inst, b, i, &row);
            consider(i, row, u);
        }
    }
    best
}

/// Random bids for agent `i` with cost exactly 1: positive bids on a random
/// nonempty subset of its goods with random cost shares, and (optionally)
/// `beta` on some of the rest.
pub fn random_feasible_row<R: Rng + ?Sized>(
    rng: &mut R,
    inst: &Instance,
    f: &CurveFamily,
    i: usize,
    allow_beta: bool,
) -> Vec<Bid> {
    let mut row = vec![Bid::Zero; inst.m()];
    let desired = inst.desired(i);
    let paid: Vec<usize> = desired.iter().copied().filter(|_| rng.random_bool(0.7)).collect();
    let paid = if paid.is_empty() {
        vec![desired[rng.random_range(0..desired.len())]]
    } else {
        paid
    };
    let weights: Vec<f64> = paid.iter().map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = weights.iter().sum();
    for (&j, w) in paid.iter().zip(&weights) {
        row[j] = Bid::positive(f.curve(j).inverse(w / total));
    }
    if allow_beta {
        for &j in desired {
            if row[j] == Bid::Zero && rng.random_bool(0.5) {
                row[j] = Bid::Beta;
            }
        }
    }
    row
}

pub fn verify_pce(inst: &Instance, g: &CurveFamily, x: &Allocation) -> PceReport {
    verify_pce_with(inst, g, x, &Tolerances::default())
}

pub fn verify_pce_with(inst: &Instance, g: &CurveFamily, x: &Allocation, tol: &Tolerances) -> PceReport {
    let fail = |v: Violation| PceReport {
        is_pce: false,
        violated_condition: Some(v),
    };
    if let Err(e) = g.validate_price(inst.m()) {
        return fail(Violation::InvalidBids { reason: e.to_string() });
    }
    if x.n() != inst.n() || x.m() != inst.m() {
        return fail(Violation::InvalidBids {
            reason: format!("allocation is {}x{}, expected {}x{}", x.n(), x.m(), inst.n(), inst.m()),
        });
    }
    let u = x.utilities(inst);
    for i in 0..inst.n() {
        for j in (0..inst.m()).filter(|&j| !g.curve(j).is_zero()) {
            let expected = inst.weight(i, j) * u[i];
            if (x.get(i, j) - expected).abs() > scale_tol(tol.eq, inst.supply(j)) {
                return fail(Violation::NotProportional {
                    agent: i,
                    good: j,
                    allocated: x.get(i, j),
                    expected,
                });
            }
        }
    }
    for i in 0..inst.n() {
        let cost = g.bundle_cost(x.row(i));
        if (cost - 1.0).abs() > tol.eq {
            return fail(Violation::BudgetNotExhausted { agent: i, cost });
        }
    }
    for j in 0..inst.m() {
        let demand = x.column_total(j);
        let s = inst.supply(j);
        let slack = scale_tol(tol.eq, s);
        if demand > s + slack || (!g.curve(j).is_zero() && demand < s - slack) {
            return fail(Violation::MarketNotCleared { good: j, demand, supply: s });
        }
    }
    PceReport {
        is_pce: true,
        violated_condition: None,
    }
}

/// Price curves `g_j = (B_j / s_j)^alpha_j f_j` supporting the allocation of
/// an equilibrium bid profile, where `B_j` is the total positive bid on `j`.
/// Goods without positive bids get the zero curve.
pub fn tp_to_pce(inst: &Instance, f: &CurveFamily, b: &BidMatrix) -> Result<(Allocation, CurveFamily), EquilibriumError> {
    let report = verify_tp_ne(inst, f, b);
    if !report.lemma_conditions_hold {
        let reason = report
            .violated_condition
            .map_or_else(|| "a saturated agent does not satisfy the budget or proportionality conditions".to_string(), |v| v.to_string());
        return Err(EquilibriumError::NotAnEquilibrium(reason));
    }
    let x = atp_allocate(inst, f, b)?;
    let curves = (0..inst.m())
        .map(|j| {
            let c = f.curve(j);
            let total = b.positive_total(j);
            if total > 0.0 {
                c.scaled((total / inst.supply(j)).powf(c.degree))
            } else {
                PowerCurve::new(0.0, c.degree)
            }
        })
        .collect();
    Ok((x, CurveFamily::new(curves)))
}

/// Constraint curves and bids whose equilibrium reproduces a price curve
/// equilibrium: priced goods keep their curve and are bid at their quantity,
/// free goods use `h` and are bid `beta` by the agents that need them.
pub fn pce_to_tp(
    inst: &Instance,
    g: &CurveFamily,
    x: &Allocation,
    h: PowerCurve,
) -> Result<(CurveFamily, BidMatrix), EquilibriumError> {
    pce_to_tp_with(inst, g, x, h, &Tolerances::default())
}

pub fn pce_to_tp_with(
    inst: &Instance,
    g: &CurveFamily,
    x: &Allocation,
    h: PowerCurve,
    tol: &Tolerances,
) -> Result<(CurveFamily, BidMatrix), EquilibriumError> {
    if let Some(v) = verify_pce_with(inst, g, x, tol).violated_condition {
        return Err(EquilibriumError::NotAnEquilibrium(v.to_string()));
    }
    CurveFamily::uniform(1, h).validate_constraint(1)?;
    let f = CurveFamily::new(
        g.curves()
            .iter()
            .map(|c| if c.is_zero() { h } else { *c })
            .collect(),
    );
    let mut bids = BidMatrix::zeros(inst.n(), inst.m());
    for i in 0..inst.n() {
        for j in 0..inst.m() {
            let bid = if g.curve(j).is_zero() {
                if inst.desires(i, j) {
                    Bid::Beta
                } else {
                    Bid::Zero
                }
            } else {
                Bid::positive(x.get(i, j))
            };
            bids.set(i, j, bid);
        }
    }
    Ok((f, bids))
}

fn check_scales(a: &[f64]) -> Result<(), EquilibriumError> {
    match a.iter().position(|&v| !(v.is_finite() && v > 0.0)) {
        Some(j) => Err(EquilibriumError::BadScale(j)),
        None => Ok(()),
    }
}

/// `f'_j = a_j f_j`.
pub fn scale_curves(f: &CurveFamily, a: &[f64]) -> Result<CurveFamily, EquilibriumError> {
    check_scales(a)?;
    if a.len() != f.len() {
        return Err(EquilibriumError::BadScale(a.len().min(f.len())));
    }
    Ok(CurveFamily::new(
        f.curves().iter().zip(a).map(|(c, &s)| c.scaled(s)).collect(),
    ))
}

/// `b'_ij = a_j^(-1/alpha_j) b_ij` on positive bids, so that costs under
/// `scale_curves(f, a)` equal the original costs under `f`.
pub fn transform_bids(b: &BidMatrix, a: &[f64], alpha: &[f64]) -> Result<BidMatrix, EquilibriumError> {
    check_scales(a)?;
    if a.len() != b.m() || alpha.len() != b.m() {
        return Err(EquilibriumError::BadScale(a.len().min(alpha.len())));
    }
    let rows = b
        .rows()
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(j, &bid)| match bid {
                    Bid::Positive(v) => Bid::Positive(v * a[j].powf(-1.0 / alpha[j])),
                    other => other,
                })
                .collect()
        })
        .collect();
    Ok(BidMatrix::new(rows))
}

pub fn construct_atp_rho_equilibrium(inst: &Instance, rho: f64) -> Result<(BidMatrix, Allocation), EquilibriumError> {
    construct_atp_rho_equilibrium_with(inst, rho, &Tolerances::default())
}

/// Nash equilibrium of `ATP(rho)` (curves `t^(1-rho)` on every good) whose
/// allocation maximizes CES welfare.
///
/// The optimal allocation with multipliers `q` is a price curve equilibrium
/// for curves `q_j t^(1-rho)`; converting it to bids and rescaling each priced
/// good by `1/q_j` yields bids `q_j^(1/(1-rho)) x_ij` under unit curves.
pub fn construct_atp_rho_equilibrium_with(
    inst: &Instance,
    rho: f64,
    tol: &Tolerances,
) -> Result<(BidMatrix, Allocation), EquilibriumError> {
    let rho_v = Rho::finite(rho)?;
    let sol = solve_ces_with(inst, rho_v, tol)?;
    let degree = 1.0 - rho;
    let q: Vec<f64> = sol.q.iter().map(|&v| if v > tol.dual { v } else { 0.0 }).collect();
    let g = CurveFamily::new(q.iter().map(|&v| PowerCurve::new(v, degree)).collect());
    let h = PowerCurve::new(1.0, degree);
    let (f, bids) = pce_to_tp_with(inst, &g, &sol.x_star, h, tol)?;

    let a: Vec<f64> = q.iter().map(|&v| if v > 0.0 { 1.0 / v } else { 1.0 }).collect();
    let unit = scale_curves(&f, &a)?;
    let bids = transform_bids(&bids, &a, &f.degrees())?;
    debug_assert!(unit
        .curves()
        .iter()
        .all(|c| (c.coeff - 1.0).abs() < 1e-12 && c.degree == degree));
    let unit = CurveFamily::atp_rho(inst.m(), rho);

    let report = verify_tp_ne_with(inst, &unit, &bids, tol);
    if !report.is_ne {
        let reason = report
            .violated_condition
            .map_or_else(|| "unknown".to_string(), |v| v.to_string());
        return Err(EquilibriumError::NotAnEquilibrium(reason));
    }
    let x = atp_allocate(inst, &unit, &bids)?;
    Ok((bids, x))
}

#[derive(Debug, Clone, Serialize)]
pub struct DynamicsRound {
    pub round: usize,
    pub welfare: f64,
    pub max_gain: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DynamicsTrace {
    pub rounds: Vec<DynamicsRound>,
    pub converged: bool,
    pub bids: BidMatrix,
    pub utilities: Vec<f64>,
    pub welfare: f64,
}

/// Round-robin best-response dynamics from a seeded random feasible profile.
///
/// Each round lets every agent in index order switch to its best response if
/// that gains more than `tol`. Stops after a round with no switch or after
/// `max_rounds`.
pub fn best_response_dynamics(
    inst: &Instance,
    f: &CurveFamily,
    rho: Rho,
    seed: u64,
    max_rounds: usize,
    tol: f64,
) -> DynamicsTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bids = BidMatrix::new(
        (0..inst.n())
            .map(|i| random_feasible_row(&mut rng, inst, f, i, false))
            .collect(),
    );
    let mut rounds = Vec::new();
    let mut converged = false;
    for round in 1..=max_rounds {
        let mut max_gain: f64 = 0.0;
        for i in 0..inst.n() {
            let current = allocate_unchecked(inst, &bids).utilities(inst)[i];
            let (row, u) = best_response(inst, f, &bids, i);
            let gain = u - current;
            if gain > tol {
                bids.set_row(i, row);
                max_gain = max_gain.max(gain);
            }
        }
        let u = allocate_unchecked(inst, &bids).utilities(inst);
        rounds.push(DynamicsRound {
            round,
            welfare: ces_welfare(rho, &u),
            max_gain,
        });
        if max_gain <= tol {
            converged = true;
            break;
        }
    }
    let utilities = allocate_unchecked(inst, &bids).utilities(inst);
    DynamicsTrace {
        rounds,
        converged,
        welfare: ces_welfare(rho, &utilities),
        utilities,
        bids,
    }
}
