//! Revelation mechanisms for maxmin welfare, and the demonstrations around
//! them.
//!
//! Mechanism 1 asks each agent for its set of required goods and gives every
//! agent with a nonempty report the largest common utility the reports allow.
//! It is strategyproof but has bad Nash equilibria (everyone claiming every
//! good). Mechanism 2 asks each agent to report everyone's sets and punishes
//! disagreement, which removes those equilibria.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::generate::counterexample;
use crate::model::{Allocation, Instance, Rho};
use crate::solver::{maxmin_gamma, solve_ces, solve_maxmin};
use crate::error::SolverError;
use crate::tolerance::TOL_EQ;

pub type GoodSet = BTreeSet<usize>;

/// `reports[i][k]` is the set agent `i` says agent `k` requires.
pub type ReportMatrix = Vec<Vec<GoodSet>>;

/// Random deviations tried per agent when exhaustive enumeration is too large.
pub const SAMPLED_DEVIATIONS: usize = 10_000;

fn set_from_mask(mask: u64, m: usize) -> GoodSet {
    (0..m).filter(|&j| mask >> j & 1 == 1).collect()
}

/// Utility of an agent whose true requirement is `true_set` for a bundle.
fn true_utility(true_set: &GoodSet, bundle: &[f64]) -> f64 {
    true_set.iter().map(|&j| bundle[j]).fold(f64::INFINITY, f64::min)
}

/// Common utility level of Mechanism 1, or `None` if every report is empty.
pub fn mechanism1_gamma(supplies: &[f64], reports: &[GoodSet]) -> Option<f64> {
    let sets: Vec<Vec<usize>> = reports.iter().map(|s| s.iter().copied().collect()).collect();
    maxmin_gamma(supplies, &sets).map(|(g, _)| g)
}

/// Mechanism 1: `x_ij = gamma*` on every reported good.
///
/// Agents reporting the empty set receive nothing and do not constrain the
/// common level. If every report is empty the allocation is zero.
pub fn mechanism1(supplies: &[f64], reports: &[GoodSet]) -> Allocation {
    let m = supplies.len();
    let gamma = mechanism1_gamma(supplies, reports).unwrap_or(0.0);
    let rows = reports
        .iter()
        .map(|set| (0..m).map(|j| if set.contains(&j) { gamma } else { 0.0 }).collect())
        .collect();
    Allocation::from_rows_unchecked(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PenaltyState {
    /// Number of agents `k` whose self-report differs from what `i` says about them.
    pub eta: Vec<usize>,
    /// Agents claiming some agent needs strictly more than that agent says.
    pub nbar: Vec<usize>,
    pub alpha: Vec<f64>,
}

/// Mechanism 2: agents out of line with someone's self-report lose a share of
/// their bundle, and agents overstating someone else's needs lose it all.
pub fn mechanism2(supplies: &[f64], reports: &ReportMatrix) -> (Allocation, PenaltyState) {
    let n = reports.len();
    let own = |k: usize| &reports[k][k];
    let eta: Vec<usize> = (0..n)
        .map(|i| (0..n).filter(|&k| own(k) != &reports[i][k]).count())
        .collect();
    let nbar: Vec<usize> = (0..n)
        .filter(|&i| (0..n).any(|k| own(k).is_subset(&reports[i][k]) && own(k) != &reports[i][k]))
        .collect();
    let alpha: Vec<f64> = (0..n)
        .map(|i| {
            if nbar.contains(&i) {
                0.0
            } else {
                1.0 - eta[i] as f64 / n as f64
            }
        })
        .collect();
    let profile: Vec<GoodSet> = (0..n)
        .map(|i| if nbar.contains(&i) { GoodSet::new() } else { own(i).clone() })
        .collect();
    let y = mechanism1(supplies, &profile);
    let rows = y
        .rows()
        .iter()
        .zip(&alpha)
        .map(|(row, a)| row.iter().map(|v| a * v).collect())
        .collect();
    (Allocation::from_rows_unchecked(rows), PenaltyState { eta, nbar, alpha })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Deviation {
    pub agent: usize,
    pub report: GoodSet,
    pub truthful_utility: f64,
    pub utility: f64,
}

/// Searches all `2^m` reports of agent `i` (others truthful) for one that
/// strictly raises its true utility by more than `TOL_EQ`.
pub fn check_strategyproof_m1(supplies: &[f64], true_sets: &[GoodSet], i: usize) -> Option<Deviation> {
    let m = supplies.len();
    assert!(m <= 20, "exhaustive report enumeration needs m <= 20");
    let truthful = true_utility(&true_sets[i], mechanism1(supplies, true_sets).row(i));
    let mut reports = true_sets.to_vec();
    (0..1u64 << m).find_map(|mask| {
        reports[i] = set_from_mask(mask, m);
        let u = true_utility(&true_sets[i], mechanism1(supplies, &reports).row(i));
        (u > truthful + TOL_EQ).then(|| Deviation {
            agent: i,
            report: reports[i].clone(),
            truthful_utility: truthful,
            utility: u,
        })
    })
}

/// Best single-agent deviation from a Mechanism 1 report profile, searching
/// all `2^m` reports per agent.
pub fn m1_deviation(supplies: &[f64], true_sets: &[GoodSet], reports: &[GoodSet]) -> Option<Deviation> {
    let m = supplies.len();
    let base = mechanism1(supplies, reports);
    (0..reports.len()).find_map(|i| {
        let current = true_utility(&true_sets[i], base.row(i));
        let mut trial = reports.to_vec();
        (0..1u64 << m).find_map(|mask| {
            trial[i] = set_from_mask(mask, m);
            let u = true_utility(&true_sets[i], mechanism1(supplies, &trial).row(i));
            (u > current + TOL_EQ).then(|| Deviation {
                agent: i,
                report: trial[i].clone(),
                truthful_utility: current,
                utility: u,
            })
        })
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BadNeReport {
    pub n: usize,
    /// Everyone reporting every good is a Nash equilibrium.
    pub all_goods_is_ne: bool,
    pub achieved_maxmin: f64,
    pub optimal_maxmin: f64,
    pub ratio: f64,
    pub truthful_is_ne: bool,
}

/// `n` agents each needing only their own unit good: everyone reporting all
/// goods is an equilibrium of Mechanism 1 with maxmin `1/n` instead of `1`.
pub fn demo_bad_ne_m1(n: usize) -> BadNeReport {
    assert!(n >= 2);
    let supplies = vec![1.0; n];
    let true_sets: Vec<GoodSet> = (0..n).map(|i| GoodSet::from([i])).collect();
    let all: Vec<GoodSet> = vec![(0..n).collect(); n];
    let maxmin = |reports: &[GoodSet]| {
        let x = mechanism1(&supplies, reports);
        (0..n)
            .map(|i| true_utility(&true_sets[i], x.row(i)))
            .fold(f64::INFINITY, f64::min)
    };
    let achieved = maxmin(&all);
    let optimal = maxmin(&true_sets);
    BadNeReport {
        n,
        all_goods_is_ne: m1_deviation(&supplies, &true_sets, &all).is_none(),
        achieved_maxmin: achieved,
        optimal_maxmin: optimal,
        ratio: optimal / achieved,
        truthful_is_ne: m1_deviation(&supplies, &true_sets, &true_sets).is_none(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct M2Deviation {
    pub agent: usize,
    pub row: Vec<GoodSet>,
    pub current_utility: f64,
    pub utility: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct M2Report {
    pub is_ne: bool,
    pub exhaustive: bool,
    pub deviations_checked: usize,
    pub witness: Option<M2Deviation>,
    /// Maxmin welfare of the mechanism's output under true sets.
    pub welfare: f64,
    pub optimal_welfare: f64,
}

/// Searches single-agent row deviations from a Mechanism 2 report profile.
///
/// All `2^(m n)` rows are tried when `n, m <= 3`; otherwise
/// `SAMPLED_DEVIATIONS` uniform random rows per agent.
pub fn m2_deviation(
    supplies: &[f64],
    true_sets: &[GoodSet],
    reports: &ReportMatrix,
    seed: u64,
) -> (Option<M2Deviation>, bool, usize) {
    let n = reports.len();
    let m = supplies.len();
    let exhaustive = n <= 3 && m <= 3;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = mechanism2(supplies, reports).0;
    let mut checked = 0;
    for i in 0..n {
        let current = true_utility(&true_sets[i], base.row(i));
        let total = if exhaustive { 1u64 << (m * n) } else { SAMPLED_DEVIATIONS as u64 };
        let mut trial = reports.clone();
        for code in 0..total {
            let row: Vec<GoodSet> = if exhaustive {
                (0..n).map(|k| set_from_mask(code >> (k * m) & ((1 << m) - 1), m)).collect()
            } else {
                (0..n).map(|_| set_from_mask(rng.random_range(0..1u64 << m), m)).collect()
            };
            trial[i] = row;
            checked += 1;
            let u = true_utility(&true_sets[i], mechanism2(supplies, &trial).0.row(i));
            if u > current + TOL_EQ {
                let witness = M2Deviation {
                    agent: i,
                    row: trial[i].clone(),
                    current_utility: current,
                    utility: u,
                };
                return (Some(witness), exhaustive, checked);
            }
        }
    }
    (None, exhaustive, checked)
}

/// Truthful reporting (every agent reports the true matrix) is an
/// equilibrium of Mechanism 2 with maxmin-optimal output.
pub fn demo_m2_truthful_ne(inst: &Instance, seed: u64) -> M2Report {
    let true_sets: Vec<GoodSet> = (0..inst.n())
        .map(|i| inst.desired(i).iter().copied().collect())
        .collect();
    let reports: ReportMatrix = vec![true_sets.clone(); inst.n()];
    m2_report(inst.supplies(), &true_sets, &reports, solve_maxmin(inst).objective, seed)
}

/// The profile where every agent claims everyone needs every good, under
/// Mechanism 2, for `n` agents each needing only their own unit good.
/// Unlike under Mechanism 1 this is not an equilibrium.
pub fn demo_all_goods_m2(n: usize, seed: u64) -> M2Report {
    let supplies = vec![1.0; n];
    let true_sets: Vec<GoodSet> = (0..n).map(|i| GoodSet::from([i])).collect();
    let reports: ReportMatrix = vec![vec![(0..n).collect(); n]; n];
    m2_report(&supplies, &true_sets, &reports, 1.0, seed)
}

fn m2_report(supplies: &[f64], true_sets: &[GoodSet], reports: &ReportMatrix, optimal: f64, seed: u64) -> M2Report {
    let x = mechanism2(supplies, reports).0;
    let welfare = (0..true_sets.len())
        .map(|i| true_utility(&true_sets[i], x.row(i)))
        .fold(f64::INFINITY, f64::min);
    let (witness, exhaustive, checked) = m2_deviation(supplies, true_sets, reports, seed);
    M2Report {
        is_ne: witness.is_none(),
        exhaustive,
        deviations_checked: checked,
        witness,
        welfare,
        optimal_welfare: optimal,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CesLieReport {
    pub rho: Rho,
    pub truthful_utilities: Vec<f64>,
    pub lie_utilities: Vec<f64>,
    /// True utility of the lying agent in each case.
    pub truthful_u4: f64,
    pub lie_u4: f64,
    /// Truthful utility below one half and lie utility at least one half.
    pub lie_pays: bool,
}

/// CES welfare maximization is not strategyproof: on the fixed five-agent
/// instance, agent 3 gains by claiming the shared good 6 as well.
pub fn demo_not_strategyproof_ces(rho: Rho) -> Result<CesLieReport, SolverError> {
    let liar = 3;
    let truthful = counterexample(false);
    let lie = counterexample(true);
    let solve = |inst: &Instance| match rho {
        Rho::NegInfinity => Ok(solve_maxmin(inst)),
        r => solve_ces(inst, r),
    };
    let t = solve(&truthful)?;
    let l = solve(&lie)?;
    let true_set: GoodSet = truthful.desired(liar).iter().copied().collect();
    let truthful_u4 = true_utility(&true_set, t.x_star.row(liar));
    let lie_u4 = true_utility(&true_set, l.x_star.row(liar));
    Ok(CesLieReport {
        rho,
        truthful_utilities: t.u_star,
        lie_utilities: l.u_star,
        truthful_u4,
        lie_u4,
        lie_pays: truthful_u4 < 0.5 && lie_u4 >= 0.5 - TOL_EQ,
    })
}
