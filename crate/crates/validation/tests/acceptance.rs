//! Acceptance gate. Runs every criterion at its stated tolerance, prints one
//! PASS/FAIL line per criterion and exits nonzero if any fails.
//!
//! Reference values come from oracles written here: closed forms, grid
//! searches, bisection and an independent implementation of the allocation
//! rule. None of them call the solver or the best-response routine.

use std::cell::Cell;
use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tradepost::equilibrium::{pce_to_tp_with, verify_pce_with, verify_tp_ne_swept, verify_tp_ne_with};
use tradepost::generate::{counterexample, random_instance, random_instance_sized};
use tradepost::maxmin::{
    check_strategyproof_m1, demo_bad_ne_m1, demo_m2_truthful_ne, mechanism1_gamma, GoodSet,
};
use tradepost::solver::solve_ces_with;
use tradepost::{
    atp_allocate, ces_welfare, construct_atp_rho_equilibrium, scale_curves, solve_ces, solve_maxmin,
    tp_to_pce, transform_bids, Bid, BidMatrix, CurveFamily, Instance, PowerCurve, Rho, Tolerances,
};

const EQ_RHOS: [f64; 3] = [-2.0, 0.0, 0.5];

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(failures: Vec<String>, summary: String) -> Outcome {
    if failures.is_empty() {
        Outcome { ok: true, detail: summary }
    } else {
        let shown: Vec<_> = failures.iter().take(5).cloned().collect();
        Outcome {
            ok: false,
            detail: format!("{} failure(s): {}", failures.len(), shown.join("; ")),
        }
    }
}

fn run(name: &str, budget: Option<Duration>, body: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let mut out = body();
    let elapsed = start.elapsed();
    if let Some(limit) = budget {
        if elapsed > limit {
            out.ok = false;
            out.detail = format!("runtime {elapsed:.2?} exceeds {limit:?}; {}", out.detail);
        }
    }
    let tag = if out.ok { "PASS" } else { "FAIL" };
    println!("[{tag}] {name} ({elapsed:.2?}): {}", out.detail);
    out.ok
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300) || (a - b).abs() <= 1e-300
}

fn instances_2_3(count: usize) -> Vec<(u64, Instance)> {
    (0..count as u64)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            (seed, random_instance(&mut rng, 10, 10, 5))
        })
        .collect()
}

// ---------------------------------------------------------------- criterion 1

/// Truthful counterexample: the three agents sharing good 6 get `a`, the two
/// crossing agents get `1 - a`, with `3a <= 2`. Maximizes
/// `3 phi(a) + 2 phi(1 - a)` by ternary search (concave in `a`).
fn counterexample_oracle(rho: f64) -> f64 {
    let phi = |v: f64| if rho == 0.0 { v.ln() } else { v.powf(rho) / rho };
    let obj = |a: f64| 3.0 * phi(a) + 2.0 * phi(1.0 - a);
    let (mut lo, mut hi) = (1e-12, 2.0 / 3.0);
    for _ in 0..300 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if obj(m1) < obj(m2) {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    1.0 - 0.5 * (lo + hi)
}

fn criterion1() -> Outcome {
    let mut failures = Vec::new();
    let mut seen = Vec::new();
    let truthful = counterexample(false);
    let lie = counterexample(true);
    for rho in [-2.0, -1.0, -0.5, 0.0] {
        let closed = 1.0 - 1.0 / (1.5f64.powf(1.0 / (rho - 1.0)) + 1.0);
        let searched = counterexample_oracle(rho);
        if (closed - searched).abs() > 1e-7 {
            failures.push(format!("oracles disagree at rho={rho}: {closed} vs {searched}"));
        }
        match solve_ces(&truthful, Rho::Finite(rho)) {
            Ok(s) => {
                seen.push(format!("rho={rho}: u4={:.6}", s.u_star[3]));
                if (s.u_star[3] - closed).abs() > 1e-5 {
                    failures.push(format!("rho={rho}: truthful u4 {} vs {closed}", s.u_star[3]));
                }
            }
            Err(e) => failures.push(format!("rho={rho}: {e}")),
        }
    }
    for (rho, expected) in [(Rho::Finite(0.9), 1.0 / 3.0), (Rho::One, 0.0)] {
        match solve_ces(&truthful, rho) {
            Ok(s) => {
                seen.push(format!("rho={rho}: u4={:.6}", s.u_star[3]));
                if (s.u_star[3] - expected).abs() > 1e-5 {
                    failures.push(format!("rho={rho}: truthful u4 {} vs expected {expected}", s.u_star[3]));
                }
            }
            Err(e) => failures.push(format!("rho={rho}: {e}")),
        }
    }
    for rho in [Rho::Finite(-2.0), Rho::Finite(-1.0), Rho::Finite(-0.5), Rho::Finite(0.0), Rho::Finite(0.9), Rho::One] {
        match solve_ces(&lie, rho) {
            Ok(s) => {
                if let Some(u) = s.u_star.iter().find(|u| (*u - 0.5).abs() > 1e-5) {
                    failures.push(format!("rho={rho}: lie utility {u} != 0.5"));
                }
            }
            Err(e) => failures.push(format!("rho={rho} lie: {e}")),
        }
    }
    outcome(failures, format!("{}; lie profile all 0.5", seen.join(", ")))
}

// ------------------------------------------------------------- criteria 2 + 3

fn criterion2(instances: &[(u64, Instance)]) -> Outcome {
    let tol = Tolerances::default();
    let mut failures = Vec::new();
    let mut worst_gap: f64 = 0.0;
    for (seed, inst) in instances {
        for rho in EQ_RHOS {
            let ctx = format!("instance {seed} rho={rho}");
            let (bids, x) = match construct_atp_rho_equilibrium(inst, rho) {
                Ok(v) => v,
                Err(e) => {
                    failures.push(format!("{ctx}: {e}"));
                    continue;
                }
            };
            let f = CurveFamily::atp_rho(inst.m(), rho);
            match verify_tp_ne_swept(inst, &f, &bids, &tol, *seed) {
                Ok(r) if r.is_ne && r.lemma_conditions_hold && r.deviation_witness.is_none() => {}
                Ok(r) => failures.push(format!("{ctx}: {:?} {:?}", r.violated_condition, r.deviation_witness)),
                Err(e) => failures.push(format!("{ctx}: {e}")),
            }
            let opt = solve_ces(inst, Rho::Finite(rho)).map(|s| s.objective);
            let w = ces_welfare(Rho::Finite(rho), &x.utilities(inst));
            match opt {
                Ok(opt) => {
                    let gap = (w - opt).abs() / opt.abs().max(1e-300);
                    worst_gap = worst_gap.max(gap);
                    if gap > 1e-5 {
                        failures.push(format!("{ctx}: welfare {w} vs optimum {opt}"));
                    }
                }
                Err(e) => failures.push(format!("{ctx}: {e}")),
            }
        }
    }
    outcome(
        failures,
        format!("{} equilibria verified, worst relative welfare gap {worst_gap:.1e}", instances.len() * 3),
    )
}

fn criterion3(instances: &[(u64, Instance)]) -> Outcome {
    let tol = Tolerances::default();
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for (seed, inst) in instances {
        for rho in EQ_RHOS {
            let ctx = format!("instance {seed} rho={rho}");
            let f = CurveFamily::atp_rho(inst.m(), rho);
            match construct_atp_rho_equilibrium(inst, rho).map_err(|e| e.to_string()).and_then(|(b, _)| {
                tp_to_pce(inst, &f, &b).map_err(|e| e.to_string())
            }) {
                Ok((x, g)) => {
                    if let Some(v) = verify_pce_with(inst, &g, &x, &tol).violated_condition {
                        failures.push(format!("{ctx}: tp->pce {v}"));
                    }
                }
                Err(e) => failures.push(format!("{ctx}: {e}")),
            }

            let sol = match solve_ces(inst, Rho::Finite(rho)) {
                Ok(s) => s,
                Err(e) => {
                    failures.push(format!("{ctx}: {e}"));
                    continue;
                }
            };
            let g = CurveFamily::new(
                sol.q
                    .iter()
                    .map(|&q| PowerCurve::new(if q > tol.dual { q } else { 0.0 }, 1.0 - rho))
                    .collect(),
            );
            let h = PowerCurve::new(1.0, 1.0 - rho);
            let (f2, b2) = match pce_to_tp_with(inst, &g, &sol.x_star, h, &tol) {
                Ok(v) => v,
                Err(e) => {
                    failures.push(format!("{ctx}: pce->tp {e}"));
                    continue;
                }
            };
            let r = verify_tp_ne_with(inst, &f2, &b2, &tol);
            if !r.is_ne {
                failures.push(format!("{ctx}: pce->tp not an equilibrium: {:?}", r.violated_condition));
                continue;
            }
            match tp_to_pce(inst, &f2, &b2) {
                Ok((x3, _)) => {
                    for (a, b) in x3.utilities(inst).iter().zip(&sol.u_star) {
                        worst = worst.max((a - b).abs());
                    }
                    if x3.utilities(inst).iter().zip(&sol.u_star).any(|(a, b)| (a - b).abs() > 1e-6) {
                        failures.push(format!("{ctx}: round trip changed utilities"));
                    }
                }
                Err(e) => failures.push(format!("{ctx}: round trip {e}")),
            }
        }
    }
    outcome(failures, format!("round trips preserve utilities to {worst:.1e}"))
}

// ---------------------------------------------------------------- criterion 4

fn criterion4() -> Outcome {
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for k in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(4000 + k);
        let inst = random_instance(&mut rng, 8, 8, 5);
        let rho = EQ_RHOS[rng.random_range(0..3)];
        let f = CurveFamily::atp_rho(inst.m(), rho);
        let bids = match construct_atp_rho_equilibrium(&inst, rho) {
            Ok((b, _)) => b,
            Err(e) => {
                failures.push(format!("triple {k}: {e}"));
                continue;
            }
        };
        let a: Vec<f64> = (0..inst.m()).map(|_| 10f64.powf(rng.random_range(-2.0..2.0))).collect();
        let f2 = scale_curves(&f, &a).unwrap();
        let b2 = transform_bids(&bids, &a, &f.degrees()).unwrap();
        let x1 = atp_allocate(&inst, &f, &bids).unwrap();
        let x2 = match atp_allocate(&inst, &f2, &b2) {
            Ok(x) => x,
            Err(e) => {
                failures.push(format!("triple {k}: {e}"));
                continue;
            }
        };
        let diff = x1.max_abs_diff(&x2);
        worst = worst.max(diff);
        if diff > 1e-9 {
            failures.push(format!("triple {k}: allocation differs by {diff}"));
        }
        let tol = Tolerances::default();
        let v1 = verify_tp_ne_with(&inst, &f, &bids, &tol).is_ne;
        let v2 = verify_tp_ne_with(&inst, &f2, &b2, &tol).is_ne;
        if v1 != v2 {
            failures.push(format!("triple {k}: verdict {v1} vs {v2}"));
        }
    }
    outcome(failures, format!("100 scaled triples, max allocation difference {worst:.1e}"))
}

// ---------------------------------------------------------------- criterion 5

/// Welfare maximum over utility vectors on a grid refined down to `1e-3`.
/// The last agent's utility is set to the largest feasible value, which keeps
/// the searched function concave in the remaining coordinates.
fn grid_oracle(inst: &Instance, rho: Rho) -> f64 {
    let n = inst.n();
    let cap: Vec<f64> = (0..n).map(|i| inst.max_utility(i)).collect();
    let eval = |u: &mut Vec<f64>| -> Option<f64> {
        let last = n - 1;
        let mut room = f64::INFINITY;
        for &j in inst.desired(last) {
            let used: f64 = (0..last).filter(|&k| inst.desires(k, j)).map(|k| u[k]).sum();
            room = room.min(inst.supply(j) - used);
        }
        if room < -1e-12 {
            return None;
        }
        u[last] = room.max(0.0);
        for j in 0..inst.m() {
            let load: f64 = (0..n).filter(|&k| inst.desires(k, j)).map(|k| u[k]).sum();
            if load > inst.supply(j) + 1e-12 {
                return None;
            }
        }
        Some(ces_welfare(rho, u))
    };

    let free = n - 1;
    let mut lo = vec![0.0; free];
    let mut hi: Vec<f64> = cap[..free].to_vec();
    let mut best = (f64::NEG_INFINITY, vec![0.0; free]);
    let points = 20usize;
    loop {
        let steps: Vec<f64> = (0..free).map(|k| (hi[k] - lo[k]) / points as f64).collect();
        let total = (points + 1).pow(free as u32);
        let mut u = vec![0.0; n];
        for code in 0..total {
            let mut c = code;
            for k in 0..free {
                u[k] = lo[k] + steps[k] * (c % (points + 1)) as f64;
                c /= points + 1;
            }
            if let Some(w) = eval(&mut u) {
                if w > best.0 {
                    best = (w, u[..free].to_vec());
                }
            }
        }
        let step = steps.iter().copied().fold(0.0, f64::max);
        if step <= 1e-3 || free == 0 {
            break;
        }
        for k in 0..free {
            lo[k] = (best.1[k] - 2.0 * steps[k]).max(0.0);
            hi[k] = (best.1[k] + 2.0 * steps[k]).min(cap[k]);
        }
    }
    best.0
}

fn criterion5() -> Outcome {
    let tol = Tolerances::default();
    let mut failures = Vec::new();
    let mut worst_gap: f64 = 0.0;
    let mut worst_kkt: f64 = 0.0;
    for k in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + k);
        let inst = random_instance(&mut rng, 4, 4, 5);
        for rho in [Rho::Finite(-2.0), Rho::Finite(0.0), Rho::Finite(0.5), Rho::One] {
            let sol = match solve_ces_with(&inst, rho, &tol) {
                Ok(s) => s,
                Err(e) => {
                    failures.push(format!("instance {k} rho={rho}: {e}"));
                    continue;
                }
            };
            let grid = grid_oracle(&inst, rho);
            let gap = (sol.objective - grid).abs();
            worst_gap = worst_gap.max(gap);
            worst_kkt = worst_kkt.max(sol.kkt_residual);
            if gap > 2e-3 {
                failures.push(format!("instance {k} rho={rho}: solver {} vs grid {grid}", sol.objective));
            }
            if sol.kkt_residual > 1e-7 {
                failures.push(format!("instance {k} rho={rho}: KKT residual {}", sol.kkt_residual));
            }
        }
    }
    outcome(
        failures,
        format!("80 solves, max |solver - grid| {worst_gap:.1e}, max KKT residual {worst_kkt:.1e}"),
    )
}

// ---------------------------------------------------------------- criterion 6

/// Largest common utility by bisection on the feasibility of `x_ij = g w_ij`.
fn gamma_oracle(inst: &Instance) -> f64 {
    let feasible = |g: f64| {
        (0..inst.m()).all(|j| {
            let load: f64 = (0..inst.n()).filter(|&i| inst.desires(i, j)).map(|_| g).sum();
            load <= inst.supply(j)
        })
    };
    let (mut lo, mut hi) = (0.0, inst.supplies().iter().copied().fold(0.0, f64::max) + 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

fn true_sets(inst: &Instance) -> Vec<GoodSet> {
    (0..inst.n()).map(|i| inst.desired(i).iter().copied().collect()).collect()
}

fn criterion6() -> Outcome {
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for k in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(6000 + k);
        let inst = random_instance(&mut rng, 10, 10, 5);
        let closed = solve_maxmin(&inst).objective;
        let oracle = gamma_oracle(&inst);
        worst = worst.max((closed - oracle).abs());
        if (closed - oracle).abs() > 1e-9 {
            failures.push(format!("instance {k}: gamma {closed} vs oracle {oracle}"));
        }
        let via_reports = mechanism1_gamma(inst.supplies(), &true_sets(&inst));
        if via_reports != Some(closed) {
            failures.push(format!("instance {k}: mechanism gamma {via_reports:?}"));
        }
    }
    for k in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(6500 + k);
        let inst = random_instance(&mut rng, 5, 5, 5);
        let sets = true_sets(&inst);
        for i in 0..inst.n() {
            if let Some(d) = check_strategyproof_m1(inst.supplies(), &sets, i) {
                failures.push(format!("instance {k}: agent {i} gains with {:?}", d.report));
            }
        }
    }
    for n in 2..=4 {
        let r = demo_bad_ne_m1(n);
        if !r.all_goods_is_ne || r.ratio != n as f64 {
            failures.push(format!("n={n}: equilibrium {} ratio {}", r.all_goods_is_ne, r.ratio));
        }
    }
    let mut m2_checked = 0;
    for k in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(6800 + k);
        let n = rng.random_range(1..=3);
        let m = rng.random_range(1..=3);
        let inst = random_instance_sized(&mut rng, n, m, 5);
        let r = demo_m2_truthful_ne(&inst, k);
        m2_checked += r.deviations_checked;
        if !r.exhaustive || !r.is_ne {
            failures.push(format!("m2 instance {k}: exhaustive {} witness {:?}", r.exhaustive, r.witness));
        }
        if (r.welfare - solve_maxmin(&inst).objective).abs() > 1e-12 {
            failures.push(format!("m2 instance {k}: welfare {} vs {}", r.welfare, r.optimal_welfare));
        }
    }
    outcome(
        failures,
        format!(
            "gamma within {worst:.1e} of oracle; strategyproof on 20 instances; ratios 2,3,4; \
             {m2_checked} mechanism-2 deviations rejected"
        ),
    )
}

// ---------------------------------------------------------------- criterion 7

/// Allocation rule written from its definition, independent of the library.
fn oracle_allocate(inst: &Instance, bids: &[Vec<Bid>]) -> Vec<Vec<f64>> {
    let (n, m) = (inst.n(), inst.m());
    let amount = |b: Bid| if let Bid::Positive(v) = b { v } else { 0.0 };
    let mut x = vec![vec![0.0; m]; n];
    let mut paid = vec![false; m];
    for j in 0..m {
        let total: f64 = (0..n).map(|i| amount(bids[i][j])).sum();
        if total > 0.0 {
            paid[j] = true;
            for i in 0..n {
                x[i][j] = inst.supply(j) * amount(bids[i][j]) / total;
            }
        }
    }
    let mut zeroed = BTreeSet::new();
    for j in (0..m).filter(|&j| !paid[j]) {
        let mut claimed = 0.0;
        for i in 0..n {
            if bids[i][j] == Bid::Beta {
                let reference = (0..m).find(|&l| amount(bids[i][l]) > 0.0);
                x[i][j] = reference.map_or(0.0, |l| x[i][l]);
                claimed += x[i][j];
            }
        }
        if claimed > inst.supply(j) + 1e-9 {
            zeroed.extend((0..n).filter(|&i| bids[i][j] == Bid::Beta));
        }
    }
    for i in zeroed {
        x[i].iter_mut().for_each(|v| *v = 0.0);
    }
    x
}

fn oracle_utility(inst: &Instance, bids: &[Vec<Bid>], i: usize) -> f64 {
    let x = oracle_allocate(inst, bids);
    inst.desired(i).iter().map(|&j| x[i][j]).fold(f64::INFINITY, f64::min)
}

/// All bid vectors with linear costs on the `0.25` grid, with `beta` allowed.
fn grid_rows(m: usize) -> Vec<Vec<Bid>> {
    let mut rows = vec![(Vec::new(), 0usize)];
    for _ in 0..m {
        let mut next = Vec::new();
        for (row, quarters) in rows {
            for q in 0..=(4 - quarters) {
                let mut r = row.clone();
                r.push(if q == 0 { Bid::Zero } else { Bid::Positive(q as f64 * 0.25) });
                next.push((r, quarters + q));
            }
            let mut r = row.clone();
            r.push(Bid::Beta);
            next.push((r, quarters));
        }
        rows = next;
    }
    rows.into_iter().map(|(r, _)| r).collect()
}

/// Supremum of agent `i`'s utility over all deviations under linear costs.
///
/// Grid rows are tried directly. Then, for every split of the agent's goods
/// into paid and `beta`, the largest level `t` with affordable bids and no
/// penalty is found by bisection; bids on goods nobody else pays for cost
/// nothing in the limit.
fn oracle_best_utility(inst: &Instance, bids: &[Vec<Bid>], i: usize) -> f64 {
    let m = inst.m();
    let mut trial = bids.to_vec();
    let mut best: f64 = 0.0;
    for row in grid_rows(m) {
        trial[i] = row;
        best = best.max(oracle_utility(inst, &trial, i));
    }
    let desired = inst.desired(i);
    let others: Vec<f64> = (0..m)
        .map(|j| {
            (0..inst.n())
                .filter(|&k| k != i)
                .map(|k| if let Bid::Positive(v) = bids[k][j] { v } else { 0.0 })
                .sum()
        })
        .collect();
    for mask in 1u32..(1 << desired.len()) {
        let paid: Vec<usize> = (0..desired.len()).filter(|&k| mask >> k & 1 == 1).map(|k| desired[k]).collect();
        let contested: Vec<usize> = paid.iter().copied().filter(|&j| others[j] > 0.0).collect();
        let row_at = |t: f64| {
            let mut row = vec![Bid::Zero; m];
            for &j in desired {
                row[j] = Bid::Beta;
            }
            for &j in &paid {
                row[j] = if others[j] > 0.0 {
                    Bid::Positive(t * others[j] / (inst.supply(j) - t))
                } else {
                    Bid::Positive(1e-13)
                };
            }
            row
        };
        let ok = |t: f64, trial: &mut Vec<Vec<Bid>>| -> Option<f64> {
            let row = row_at(t);
            let cost: f64 = contested.iter().map(|&j| if let Bid::Positive(v) = row[j] { v } else { 0.0 }).sum();
            if cost > 1.0 {
                return None;
            }
            trial[i] = row;
            let u = oracle_utility(inst, trial, i);
            (u > 0.0).then_some(u)
        };
        if contested.is_empty() {
            if let Some(u) = ok(0.0, &mut trial) {
                best = best.max(u);
            }
            continue;
        }
        let top = contested.iter().map(|&j| inst.supply(j)).fold(f64::INFINITY, f64::min);
        let (mut lo, mut hi) = (0.0, top);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if ok(mid, &mut trial).is_some() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if let Some(u) = ok(lo, &mut trial) {
            best = best.max(u);
        }
    }
    best
}

/// A profile on the `0.25` grid, a constructed equilibrium under linear
/// curves, or such an equilibrium with one row replaced.
fn grid_profile(rng: &mut ChaCha8Rng) -> (Instance, Vec<Vec<Bid>>) {
    let n = rng.random_range(1..=3);
    let m = rng.random_range(1..=3);
    let inst = random_instance_sized(rng, n, m, 3);
    let rows = grid_rows(m);
    let random_profile = |rng: &mut ChaCha8Rng| -> Vec<Vec<Bid>> {
        (0..n).map(|_| rows[rng.random_range(0..rows.len())].clone()).collect()
    };
    let kind = rng.random_range(0..3);
    let bids = if kind == 0 {
        random_profile(rng)
    } else {
        let (b, _) = construct_atp_rho_equilibrium(&inst, 0.0).expect("construction succeeds");
        let mut b = b.rows().to_vec();
        if kind == 2 {
            let i = rng.random_range(0..n);
            b[i] = rows[rng.random_range(0..rows.len())].clone();
        }
        b
    };
    (inst, bids)
}

fn property(runner: &mut TestRunner, name: &str, failures: &mut Vec<String>, test: impl Fn(u64) -> Result<(), TestCaseError>) {
    if let Err(e) = runner.run(&any::<u64>(), test) {
        failures.push(format!("{name}: {e}"));
    }
}

fn criterion7() -> Outcome {
    let cases = 256;
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    let mut failures = Vec::new();
    let (ne_seen, non_ne_seen) = (Cell::new(0), Cell::new(0));

    property(&mut runner, "equilibrium conditions match deviation oracle", &mut failures, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (inst, bids) = grid_profile(&mut rng);
        let f = CurveFamily::linear(inst.m());
        let report = verify_tp_ne_with(&inst, &f, &BidMatrix::new(bids.clone()), &Tolerances::default());
        let gains: Vec<f64> = (0..inst.n())
            .map(|i| oracle_best_utility(&inst, &bids, i) - oracle_utility(&inst, &bids, i))
            .collect();
        let oracle_ne = gains.iter().all(|&g| g <= 1e-6);
        let counter = if oracle_ne { &ne_seen } else { &non_ne_seen };
        counter.set(counter.get() + 1);
        prop_assert_eq!(report.is_ne, oracle_ne, "report {:?}, gains {:?}, bids {:?}, inst {:?}", report, gains, bids, inst);
        Ok(())
    });

    property(&mut runner, "paid goods are fully allocated", &mut failures, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, 6, 6, 5);
        let bids: Vec<Vec<Bid>> = (0..inst.n())
            .map(|_| {
                let w: Vec<f64> = (0..inst.m()).map(|_| rng.random_range(0.0..1.0)).collect();
                let total: f64 = w.iter().sum::<f64>().max(1.0);
                w.iter()
                    .map(|&v| match rng.random_range(0..4) {
                        0 => Bid::Zero,
                        1 => Bid::Beta,
                        _ => Bid::positive(v / total),
                    })
                    .collect()
            })
            .collect();
        let b = BidMatrix::new(bids);
        let x = atp_allocate(&inst, &CurveFamily::linear(inst.m()), &b).unwrap();
        for j in (0..inst.m()).filter(|&j| b.has_positive(j)) {
            let total = x.column_total(j);
            prop_assert!((total - inst.supply(j)).abs() <= 1e-12 * inst.supply(j), "good {} total {}", j, total);
        }
        Ok(())
    });

    property(&mut runner, "equilibria give every agent positive utility", &mut failures, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, 6, 6, 5);
        let rho = EQ_RHOS[rng.random_range(0..3)];
        let (b, x) = construct_atp_rho_equilibrium(&inst, rho).unwrap();
        prop_assert!(verify_tp_ne_with(&inst, &CurveFamily::atp_rho(inst.m(), rho), &b, &Tolerances::default()).is_ne);
        prop_assert!(x.utilities(&inst).iter().all(|&u| u > 0.0));
        Ok(())
    });

    property(&mut runner, "enlarging a report never raises the common level", &mut failures, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, 6, 6, 5);
        let mut reports = true_sets(&inst);
        let before = mechanism1_gamma(inst.supplies(), &reports).unwrap();
        let i = rng.random_range(0..inst.n());
        for _ in 0..rng.random_range(1..=inst.m()) {
            reports[i].insert(rng.random_range(0..inst.m()));
        }
        let after = mechanism1_gamma(inst.supplies(), &reports).unwrap();
        prop_assert!(after <= before);
        Ok(())
    });

    property(&mut runner, "welfare is symmetric and monotone", &mut failures, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = rng.random_range(1..=8);
        let u: Vec<f64> = (0..len).map(|_| rng.random_range(0.01..5.0)).collect();
        let rho = match rng.random_range(0..4) {
            0 => Rho::NegInfinity,
            1 => Rho::One,
            2 => Rho::Finite(0.0),
            _ => Rho::Finite(rng.random_range(-5.0..0.99)),
        };
        let base = ces_welfare(rho, &u);
        let mut perm = u.clone();
        perm.reverse();
        perm.rotate_left(rng.random_range(0..len));
        prop_assert!(rel_close(base, ces_welfare(rho, &perm), 1e-12));
        let mut up = u.clone();
        let k = rng.random_range(0..len);
        up[k] += rng.random_range(0.01..1.0);
        prop_assert!(ces_welfare(rho, &up) >= base * (1.0 - 1e-12));
        Ok(())
    });

    outcome(
        failures,
        format!(
            "5 properties x {cases} cases; oracle comparison saw {} equilibria and {} non-equilibria",
            ne_seen.get(),
            non_ne_seen.get()
        ),
    )
}

fn main() -> ExitCode {
    let instances = instances_2_3(50);
    let results = [
        run("1 counterexample regression", Some(Duration::from_secs(5)), criterion1),
        run("2 optimal equilibrium construction", Some(Duration::from_secs(60)), || criterion2(&instances)),
        run("3 reduction round trips", None, || criterion3(&instances)),
        run("4 scaling invariance", None, criterion4),
        run("5 solver vs grid oracle", None, criterion5),
        run("6 maxmin mechanisms", Some(Duration::from_secs(120)), criterion6),
        run("7 property suites", None, criterion7),
    ];
    let passed = results.iter().filter(|&&ok| ok).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
