//! CES welfare maximization over bandwidth allocations.
//!
//! Any feasible utility vector is realized by `x_ij = w_ij * u_i`, so the
//! problem is solved in utility space:
//!
//! ```text
//! max Phi_rho(u)   s.t.   sum_{i : j in R_i} u_i <= s_j,   u >= 0.
//! ```
//!
//! For finite `rho < 1` the solver minimizes the smooth convex dual over the
//! per-good multipliers `q >= 0`. Given `q`, each agent's utility has the
//! closed form `u_i(q) = (sum_{j in R_i} q_j)^(-1/(1-rho))`, which makes the
//! budget identity `sum_{j in R_i} q_j u_i^(1-rho) = 1` hold exactly at every
//! iterate, so `g_j(t) = q_j t^(1-rho)` are price curves under which every
//! agent spends a unit budget. The dual is minimized with a projected Newton
//! method (Bertsekas-style active set on the bounds `q_j >= 0`), with a
//! projected-gradient fallback when a Newton step does not make progress.
//!
//! The utilitarian case is a linear program solved by simplex; among its
//! optimal utility vectors the solver returns one maximizing the smallest
//! utility.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::SolverError;
use crate::lp;
use crate::model::{ces_welfare, Allocation, Instance, Rho};
use crate::tolerance::Tolerances;

#[derive(Debug, Clone, Serialize)]
pub struct SolveResult {
    pub rho: Rho,
    pub u_star: Vec<f64>,
    pub x_star: Allocation,
    /// Per-good multipliers; `q_j t^(1-rho)` are equilibrium price curves.
    pub q: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
}

pub fn solve_ces(inst: &Instance, rho: Rho) -> Result<SolveResult, SolverError> {
    solve_ces_with(inst, rho, &Tolerances::default())
}

pub fn solve_ces_with(inst: &Instance, rho: Rho, tol: &Tolerances) -> Result<SolveResult, SolverError> {
    match rho {
        Rho::Finite(r) => solve_finite(inst, r, tol),
        Rho::One => solve_utilitarian(inst, tol),
        Rho::NegInfinity => Err(SolverError::UnsupportedRho),
    }
}

/// Load `sum_{i : j in R_i} u_i` on every good.
fn loads(inst: &Instance, u: &[f64]) -> Vec<f64> {
    let mut load = vec![0.0; inst.m()];
    for (i, &ui) in u.iter().enumerate() {
        for &j in inst.desired(i) {
            load[j] += ui;
        }
    }
    load
}

fn agent_prices(inst: &Instance, q: &[f64]) -> Vec<f64> {
    (0..inst.n())
        .map(|i| inst.desired(i).iter().map(|&j| q[j]).sum())
        .collect()
}

/// Maximum KKT violation of `(u, q)`, with supply terms relative to `max(1, s_j)`.
///
/// Covers primal feasibility, sign constraints, complementary slackness on
/// goods with `q_j > tol_dual`, and stationarity: the budget identity
/// `sum_{j in R_i} q_j u_i^(1-rho) = 1` for finite rho, or
/// `sum_{j in R_i} q_j >= 1` with equality on agents with positive utility
/// in the utilitarian case.
pub fn kkt_residual(inst: &Instance, rho: Rho, u: &[f64], q: &[f64], tol_dual: f64) -> f64 {
    let load = loads(inst, u);
    let mut res: f64 = 0.0;
    for j in 0..inst.m() {
        let scale = inst.supply(j).max(1.0);
        let slack = inst.supply(j) - load[j];
        res = res.max((-slack).max(0.0) / scale);
        res = res.max((-q[j]).max(0.0));
        if q[j] > tol_dual {
            res = res.max(slack.abs() / scale);
        }
    }
    for &ui in u {
        res = res.max((-ui).max(0.0));
    }
    let prices = agent_prices(inst, q);
    match rho {
        Rho::Finite(r) => {
            for (ui, pi) in u.iter().zip(&prices) {
                if *ui > 0.0 {
                    res = res.max((pi * ui.powf(1.0 - r) - 1.0).abs());
                } else {
                    res = f64::INFINITY;
                }
            }
        }
        Rho::One => {
            for (ui, pi) in u.iter().zip(&prices) {
                res = res.max((1.0 - pi).max(0.0));
                if *ui > tol_dual {
                    res = res.max((pi - 1.0).abs());
                }
            }
        }
        Rho::NegInfinity => {}
    }
    res
}

/// Dual objective pieces for one finite rho.
struct Dual<'a> {
    inst: &'a Instance,
    rho: f64,
    /// `1 / (1 - rho)`
    kappa: f64,
}

impl Dual<'_> {
    fn utility(&self, price: f64) -> f64 {
        price.powf(-self.kappa)
    }

    /// `sup_u h(u) - u * price` for `h(u) = u^rho / rho` (or `ln u`).
    fn conjugate(&self, price: f64) -> f64 {
        if self.rho == 0.0 {
            -price.ln() - 1.0
        } else {
            price.powf(-self.rho * self.kappa) * (1.0 - self.rho) / self.rho
        }
    }

    /// `D(q)`, or `None` if some agent faces a zero total price.
    fn value(&self, q: &[f64]) -> Option<f64> {
        let mut v: f64 = self.inst.supplies().iter().zip(q).map(|(s, qj)| s * qj).sum();
        for p in agent_prices(self.inst, q) {
            if p.is_nan() || p <= 0.0 || p.is_infinite() {
                return None;
            }
            v += self.conjugate(p);
        }
        v.is_finite().then_some(v)
    }

    /// Gradient `s_j - load_j(u(q))` and the utilities it was computed from.
    fn gradient(&self, q: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let u: Vec<f64> = agent_prices(self.inst, q)
            .into_iter()
            .map(|p| self.utility(p))
            .collect();
        let load = loads(self.inst, &u);
        let g = self
            .inst
            .supplies()
            .iter()
            .zip(&load)
            .map(|(s, l)| s - l)
            .collect();
        (g, u)
    }

    fn hessian_weights(&self, q: &[f64]) -> Vec<f64> {
        agent_prices(self.inst, q)
            .into_iter()
            .map(|p| self.kappa * p.powf(-self.kappa - 1.0))
            .collect()
    }
}

fn project(q: &[f64], d: &[f64], step: f64) -> Vec<f64> {
    q.iter().zip(d).map(|(a, b)| (a + step * b).max(0.0)).collect()
}

fn solve_finite(inst: &Instance, rho: f64, tol: &Tolerances) -> Result<SolveResult, SolverError> {
    if !(rho.is_finite() && rho < 1.0) {
        return Err(SolverError::UnsupportedRho);
    }
    let dual = Dual {
        inst,
        rho,
        kappa: 1.0 / (1.0 - rho),
    };
    let m = inst.m();
    let target = (tol.kkt * 1e-3).max(1e-13);
    // Start from prices at which every agent's utility is feasible on its own.
    let mut q: Vec<f64> = (0..m)
        .map(|j| (inst.demand_count(j) as f64 / inst.supply(j)).powf(1.0 - rho))
        .collect();
    // Scaling q by c scales every utility by c^-kappa: rescale so the
    // tightest good is exactly at capacity. Matters when kappa is large.
    let (_, u0) = dual.gradient(&q);
    let worst = loads(inst, &u0)
        .iter()
        .zip(inst.supplies())
        .map(|(l, s)| l / s)
        .fold(0.0, f64::max);
    if worst.is_finite() && worst > 0.0 {
        let c = worst.powf(1.0 - rho);
        q.iter_mut().for_each(|v| *v *= c);
    }
    let mut value = dual.value(&q).ok_or(SolverError::NonConvergence {
        iterations: 0,
        residual: f64::INFINITY,
    })?;
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut stalls = 0;
    let mut iterations = 0;

    while iterations < tol.max_iterations {
        iterations += 1;
        let (g, u) = dual.gradient(&q);
        let residual = kkt_residual(inst, Rho::Finite(rho), &u, &q, tol.dual);
        if best.as_ref().is_none_or(|(r, _)| residual < *r) {
            best = Some((residual, q.clone()));
        }
        if residual <= target {
            break;
        }

        // Bound-active set: variables pinned at zero with a positive gradient.
        let proj_dist: f64 = q
            .iter()
            .zip(&g)
            .map(|(qj, gj)| (qj - (qj - gj).max(0.0)).powi(2))
            .sum::<f64>()
            .sqrt();
        let eps = proj_dist.min(1e-3);
        let active: Vec<bool> = q.iter().zip(&g).map(|(qj, gj)| *qj <= eps && *gj > 0.0).collect();
        let weights = dual.hessian_weights(&q);
        let mut hess = DMatrix::<f64>::zeros(m, m);
        for (i, w) in weights.iter().enumerate() {
            let set = inst.desired(i);
            for &a in set {
                for &b in set {
                    hess[(a, b)] += w;
                }
            }
        }
        let direction = newton_direction(&hess, &g, &active);

        let mut accepted = None;
        if let Some(d) = direction {
            accepted = line_search(&dual, &q, value, &g, &d, &active);
        }
        if accepted.is_none() {
            // Projected gradient fallback scaled by the Hessian diagonal.
            let d: Vec<f64> = (0..m).map(|j| -g[j] / hess[(j, j)].max(1e-300)).collect();
            let none_active = vec![false; m];
            accepted = line_search(&dual, &q, value, &g, &d, &none_active);
        }
        match accepted {
            Some((next_q, next_value)) => {
                q = next_q;
                value = next_value;
                stalls = 0;
            }
            None => {
                stalls += 1;
                if stalls > 2 {
                    break;
                }
                // Round-off dominates the Armijo test: take the full Newton step
                // if it lowers the KKT residual.
                if let Some(d) = newton_direction(&hess, &g, &active) {
                    let trial = project(&q, &d, 1.0);
                    if let Some(v) = dual.value(&trial) {
                        let (_, tu) = dual.gradient(&trial);
                        if kkt_residual(inst, Rho::Finite(rho), &tu, &trial, tol.dual) < residual {
                            q = trial;
                            value = v;
                            continue;
                        }
                    }
                }
                break;
            }
        }
    }

    let (residual, q) = best.expect("at least one iterate");
    if residual > tol.kkt {
        return Err(SolverError::NonConvergence { iterations, residual });
    }
    let (_, u) = dual.gradient(&q);
    Ok(SolveResult {
        rho: Rho::Finite(rho),
        x_star: inst.leontief_allocation(&u),
        objective: ces_welfare(Rho::Finite(rho), &u),
        u_star: u,
        q,
        kkt_residual: residual,
        iterations,
    })
}

/// Newton step on the free variables, scaled gradient on the active ones.
fn newton_direction(hess: &DMatrix<f64>, g: &[f64], active: &[bool]) -> Option<Vec<f64>> {
    let m = g.len();
    let free: Vec<usize> = (0..m).filter(|&j| !active[j]).collect();
    let mut d = vec![0.0; m];
    for j in 0..m {
        if active[j] {
            d[j] = -g[j] / hess[(j, j)].max(1e-300);
        }
    }
    if free.is_empty() {
        return Some(d);
    }
    let k = free.len();
    let trace: f64 = free.iter().map(|&j| hess[(j, j)]).sum::<f64>() / k as f64;
    let mut mu = 1e-12 * trace.max(1e-300);
    for _ in 0..12 {
        let sub = DMatrix::from_fn(k, k, |a, b| {
            hess[(free[a], free[b])] + if a == b { mu } else { 0.0 }
        });
        if let Some(chol) = sub.cholesky() {
            let rhs = DVector::from_iterator(k, free.iter().map(|&j| -g[j]));
            let step = chol.solve(&rhs);
            for (a, &j) in free.iter().enumerate() {
                d[j] = step[a];
            }
            return d.iter().all(|v| v.is_finite()).then_some(d);
        }
        mu *= 100.0;
    }
    None
}

/// Armijo backtracking along the projection arc.
fn line_search(
    dual: &Dual<'_>,
    q: &[f64],
    value: f64,
    g: &[f64],
    d: &[f64],
    active: &[bool],
) -> Option<(Vec<f64>, f64)> {
    const SIGMA: f64 = 1e-4;
    let mut step = 1.0;
    for _ in 0..200 {
        let trial = project(q, d, step);
        if let Some(v) = dual.value(&trial) {
            let decrease: f64 = (0..q.len())
                .map(|j| {
                    if active[j] {
                        g[j] * (q[j] - trial[j])
                    } else {
                        -step * g[j] * d[j]
                    }
                })
                .sum();
            if decrease > 0.0 && value - v >= SIGMA * decrease {
                return Some((trial, v));
            }
        }
        step *= 0.5;
    }
    None
}

fn solve_utilitarian(inst: &Instance, tol: &Tolerances) -> Result<SolveResult, SolverError> {
    let n = inst.n();
    let m = inst.m();
    let rows: Vec<Vec<f64>> = (0..m)
        .map(|j| (0..n).map(|i| inst.weight(i, j)).collect())
        .collect();
    let first = lp::maximize(&vec![1.0; n], &rows, inst.supplies())?;

    // Tie-break: among utilitarian optima, maximize the smallest utility.
    // Variables (u_1..u_n, t).
    let mut rows2: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.push(0.0);
            r
        })
        .collect();
    let mut rhs2 = inst.supplies().to_vec();
    let mut total = vec![-1.0; n];
    total.push(0.0);
    rows2.push(total);
    rhs2.push(-first.value);
    for i in 0..n {
        let mut r = vec![0.0; n + 1];
        r[i] = -1.0;
        r[n] = 1.0;
        rows2.push(r);
        rhs2.push(0.0);
    }
    let mut c2 = vec![0.0; n];
    c2.push(1.0);
    let u = match lp::maximize(&c2, &rows2, &rhs2) {
        Ok(sol) => sol.x[..n].to_vec(),
        Err(_) => first.x.clone(),
    };
    let u: Vec<f64> = u.into_iter().map(|v| v.max(0.0)).collect();
    let q: Vec<f64> = first.duals.iter().map(|v| v.max(0.0)).collect();
    let residual = kkt_residual(inst, Rho::One, &u, &q, tol.dual);
    if residual > tol.kkt {
        return Err(SolverError::NonConvergence {
            iterations: 0,
            residual,
        });
    }
    Ok(SolveResult {
        rho: Rho::One,
        x_star: inst.leontief_allocation(&u),
        objective: ces_welfare(Rho::One, &u),
        u_star: u,
        q,
        kkt_residual: residual,
        iterations: 0,
    })
}

/// Largest common utility `gamma* = min_j s_j / #{i : j in R_i}` over goods
/// required by at least one of the given sets. Empty sets are ignored; returns
/// `None` when every set is empty.
pub fn maxmin_gamma(supplies: &[f64], sets: &[Vec<usize>]) -> Option<(f64, usize)> {
    let mut counts = vec![0usize; supplies.len()];
    for set in sets {
        for &j in set {
            counts[j] += 1;
        }
    }
    counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(j, &c)| (supplies[j] / c as f64, j))
        .fold(None, |acc: Option<(f64, usize)>, (g, j)| match acc {
            Some((bg, _)) if bg <= g => acc,
            _ => Some((g, j)),
        })
}

/// Solves the maxmin program where every agent's utility is pinned to a common
/// level `gamma`.
pub fn solve_maxmin(inst: &Instance) -> SolveResult {
    let (gamma, binding) =
        maxmin_gamma(inst.supplies(), inst.desired_sets()).expect("instances have nonempty sets");
    let u = vec![gamma; inst.n()];
    let mut q = vec![0.0; inst.m()];
    q[binding] = 1.0 / inst.demand_count(binding) as f64;
    let load = loads(inst, &u);
    let residual = inst
        .supplies()
        .iter()
        .zip(&load)
        .map(|(s, l)| (l - s).max(0.0) / s.max(1.0))
        .fold(0.0, f64::max);
    SolveResult {
        rho: Rho::NegInfinity,
        x_star: inst.leontief_allocation(&u),
        objective: gamma,
        u_star: u,
        q,
        kkt_residual: residual,
        iterations: 0,
    }
}
