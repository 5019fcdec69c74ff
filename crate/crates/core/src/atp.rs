//! The augmented trading post.
//!
//! Each agent submits one bid per good: a positive amount, `0`, or the
//! special `beta` ("I need this good but hope to get it for free"). Bids are
//! constrained by per-good curves: `sum_j f_j(b_ij) <= 1`, with `0` and
//! `beta` costing nothing. Allocation proceeds in three steps:
//!
//! 1. A good with at least one positive bid is split in proportion to the
//!    positive bids.
//! 2. On a good with no positive bid, every `beta` bidder receives the amount
//!    it got on its reference good `l_i` (the lowest-index good it bid
//!    positively on), or nothing if it has none. `0` bidders receive nothing.
//! 3. If the step-2 claims on some good exceed its supply, every `beta`
//!    bidder on that good loses its entire bundle.

use std::fmt;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::AtpError;
use crate::model::{Allocation, Instance};
use crate::tolerance::{TOL_BID, TOL_BR, TOL_FEAS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bid {
    Zero,
    Beta,
    Positive(f64),
}

impl Bid {
    /// Positive bid, collapsing amounts at or below `TOL_BID` to `Zero`.
    pub fn positive(amount: f64) -> Self {
        if amount > TOL_BID {
            Bid::Positive(amount)
        } else {
            Bid::Zero
        }
    }

    /// Arithmetic value: `beta` counts as zero.
    pub fn amount(self) -> f64 {
        match self {
            Bid::Positive(a) => a,
            _ => 0.0,
        }
    }

    pub fn is_positive(self) -> bool {
        matches!(self, Bid::Positive(_))
    }
}

impl Serialize for Bid {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Bid::Zero => s.serialize_u8(0),
            Bid::Beta => s.serialize_str("beta"),
            Bid::Positive(a) => s.serialize_f64(*a),
        }
    }
}

impl<'de> Deserialize<'de> for Bid {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct BidVisitor;

        impl Visitor<'_> for BidVisitor {
            type Value = Bid;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a nonnegative number or the string \"beta\"")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Bid, E> {
                if v.eq_ignore_ascii_case("beta") {
                    Ok(Bid::Beta)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Bid, E> {
                if v.is_finite() && v >= 0.0 {
                    Ok(Bid::positive(v))
                } else {
                    Err(E::invalid_value(de::Unexpected::Float(v), &self))
                }
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Bid, E> {
                Ok(Bid::positive(v as f64))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Bid, E> {
                if v >= 0 {
                    Ok(Bid::positive(v as f64))
                } else {
                    Err(E::invalid_value(de::Unexpected::Signed(v), &self))
                }
            }
        }

        d.deserialize_any(BidVisitor)
    }
}

/// `n x m` matrix of bids, serialized as nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BidMatrix {
    rows: Vec<Vec<Bid>>,
}

impl BidMatrix {
    pub fn new(rows: Vec<Vec<Bid>>) -> Self {
        Self { rows }
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            rows: vec![vec![Bid::Zero; m]; n],
        }
    }

    pub fn rows(&self) -> &[Vec<Bid>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[Bid] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> Bid {
        self.rows[i][j]
    }

    pub fn set(&mut self, i: usize, j: usize, bid: Bid) {
        self.rows[i][j] = bid;
    }

    pub fn set_row(&mut self, i: usize, row: Vec<Bid>) {
        self.rows[i] = row;
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn m(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    /// Sum of positive bids on good `j`.
    pub fn positive_total(&self, j: usize) -> f64 {
        self.rows.iter().map(|r| r[j].amount()).sum()
    }

    pub fn has_positive(&self, j: usize) -> bool {
        self.rows.iter().any(|r| r[j].is_positive())
    }

    fn check_shape(&self, n: usize, m: usize) -> Result<(), AtpError> {
        let bad_row = self.rows.iter().any(|r| r.len() != m);
        if self.rows.len() != n || bad_row {
            return Err(AtpError::Shape {
                rows: self.rows.len(),
                cols: self.rows.iter().map(Vec::len).find(|&l| l != m).unwrap_or(m),
                n,
                m,
            });
        }
        Ok(())
    }
}

/// `coeff * t^degree`, homogeneous of degree `degree`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerCurve {
    pub coeff: f64,
    pub degree: f64,
}

impl PowerCurve {
    pub const fn new(coeff: f64, degree: f64) -> Self {
        Self { coeff, degree }
    }

    pub fn eval(&self, t: f64) -> f64 {
        if self.coeff == 0.0 || t <= 0.0 {
            0.0
        } else {
            self.coeff * t.powf(self.degree)
        }
    }

    /// The `t` with `eval(t) = y`; requires a nonzero curve.
    pub fn inverse(&self, y: f64) -> f64 {
        (y / self.coeff).powf(1.0 / self.degree)
    }

    /// Price curves may be identically zero.
    pub fn is_zero(&self) -> bool {
        self.coeff == 0.0
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self::new(self.coeff * a, self.degree)
    }

    fn check(&self, good: usize, allow_zero: bool) -> Result<(), AtpError> {
        if !(self.degree.is_finite() && self.degree > 0.0) {
            return Err(AtpError::BadCurve {
                good,
                reason: "degree must be positive",
            });
        }
        let ok = self.coeff.is_finite() && (self.coeff > 0.0 || (allow_zero && self.coeff == 0.0));
        if !ok {
            return Err(AtpError::BadCurve {
                good,
                reason: if allow_zero {
                    "coefficient must be nonnegative"
                } else {
                    "constraint curves must be strictly increasing"
                },
            });
        }
        Ok(())
    }
}

/// One curve per good. Used both for constraint curves `f` on bids and price
/// curves `g` on quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CurveFamily {
    curves: Vec<PowerCurve>,
}

impl CurveFamily {
    pub fn new(curves: Vec<PowerCurve>) -> Self {
        Self { curves }
    }

    /// `f_j(b) = b^(1-rho)` on every good: the mechanism `ATP(rho)`.
    pub fn atp_rho(m: usize, rho: f64) -> Self {
        Self::uniform(m, PowerCurve::new(1.0, 1.0 - rho))
    }

    /// The standard trading post constraint `sum_j b_ij <= 1`.
    pub fn linear(m: usize) -> Self {
        Self::uniform(m, PowerCurve::new(1.0, 1.0))
    }

    pub fn uniform(m: usize, curve: PowerCurve) -> Self {
        Self {
            curves: vec![curve; m],
        }
    }

    pub fn curves(&self) -> &[PowerCurve] {
        &self.curves
    }

    pub fn curve(&self, j: usize) -> &PowerCurve {
        &self.curves[j]
    }

    pub fn len(&self) -> usize {
        self.curves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curves.is_empty()
    }

    pub fn degrees(&self) -> Vec<f64> {
        self.curves.iter().map(|c| c.degree).collect()
    }

    pub fn validate_constraint(&self, m: usize) -> Result<(), AtpError> {
        self.validate(m, false)
    }

    pub fn validate_price(&self, m: usize) -> Result<(), AtpError> {
        self.validate(m, true)
    }

    fn validate(&self, m: usize, allow_zero: bool) -> Result<(), AtpError> {
        if self.curves.len() != m {
            return Err(AtpError::CurveCount {
                expected: m,
                got: self.curves.len(),
            });
        }
        self.curves
            .iter()
            .enumerate()
            .try_for_each(|(j, c)| c.check(j, allow_zero))
    }

    /// `C_g(x_i) = sum_j g_j(x_ij)` for a quantity bundle.
    pub fn bundle_cost(&self, x: &[f64]) -> f64 {
        self.curves.iter().zip(x).map(|(c, &v)| c.eval(v)).sum()
    }
}

/// `C_f(b_i) = sum_j f_j(b_ij)`; `0` and `beta` cost nothing.
pub fn bid_cost(f: &CurveFamily, bids: &[Bid]) -> f64 {
    f.curves
        .iter()
        .zip(bids)
        .map(|(c, b)| c.eval(b.amount()))
        .sum()
}

/// Runs the three-step allocation rule after checking every bid constraint.
pub fn atp_allocate(inst: &Instance, f: &CurveFamily, b: &BidMatrix) -> Result<Allocation, AtpError> {
    f.validate_constraint(inst.m())?;
    b.check_shape(inst.n(), inst.m())?;
    for i in 0..inst.n() {
        let cost = bid_cost(f, b.row(i));
        if cost > 1.0 + TOL_FEAS {
            return Err(AtpError::InfeasibleBid { agent: i, cost });
        }
    }
    Ok(allocate_unchecked(inst, b))
}

/// The allocation rule without bid-constraint or shape checks.
pub(crate) fn allocate_unchecked(inst: &Instance, b: &BidMatrix) -> Allocation {
    let n = inst.n();
    let m = inst.m();
    let mut x = vec![vec![0.0; m]; n];
    let totals: Vec<f64> = (0..m).map(|j| b.positive_total(j)).collect();

    // Step 1
    for j in 0..m {
        if totals[j] > 0.0 {
            for i in 0..n {
                if let Bid::Positive(a) = b.get(i, j) {
                    x[i][j] = a / totals[j] * inst.supply(j);
                }
            }
        }
    }

    // Step 2: reference goods are step-1 goods, so their quantities are final here.
    let reference: Vec<Option<usize>> = (0..n)
        .map(|i| (0..m).find(|&j| b.get(i, j).is_positive()))
        .collect();
    for j in (0..m).filter(|&j| totals[j] <= 0.0) {
        for i in 0..n {
            if b.get(i, j) == Bid::Beta {
                x[i][j] = reference[i].map_or(0.0, |l| x[i][l]);
            }
        }
    }

    // Step 3
    let mut penalized = vec![false; n];
    for j in (0..m).filter(|&j| totals[j] <= 0.0) {
        let claimed: f64 = x.iter().map(|r| r[j]).sum();
        if claimed > inst.supply(j) + TOL_FEAS {
            for (i, flag) in penalized.iter_mut().enumerate() {
                if b.get(i, j) == Bid::Beta {
                    *flag = true;
                }
            }
        }
    }
    for (row, _) in x.iter_mut().zip(&penalized).filter(|(_, &p)| p) {
        row.iter_mut().for_each(|v| *v = 0.0);
    }
    Allocation::from_rows_unchecked(x)
}

/// Utility agent `i` gets if it replaces its row with `row`.
pub(crate) fn utility_with_row(inst: &Instance, b: &BidMatrix, i: usize, row: &[Bid]) -> f64 {
    let mut trial = b.clone();
    trial.set_row(i, row.to_vec());
    let x = allocate_unchecked(inst, &trial);
    inst.desired(i)
        .iter()
        .map(|&j| x.get(i, j))
        .fold(f64::INFINITY, f64::min)
}

/// Utility-maximizing bid vector for agent `i` with everyone else fixed.
///
/// Reaching level `t` on a good where others bid `B_j > 0` in total costs the
/// bid `t B_j / (s_j - t)`; the total cost is increasing in `t`, so the
/// highest affordable level is found by bisection. Required goods nobody else
/// pays for are bid `beta` when that does not trigger the over-claim penalty
/// for agent `i`, and otherwise a small positive amount paid out of a reserved
/// slice of the budget. The returned utility is measured by running the
/// allocation rule on the returned bids.
pub fn best_response(inst: &Instance, f: &CurveFamily, b: &BidMatrix, i: usize) -> (Vec<Bid>, f64) {
    let m = inst.m();
    let others: Vec<f64> = (0..m)
        .map(|j| b.positive_total(j) - b.get(i, j).amount())
        .map(|v| v.max(0.0))
        .collect();
    let desired = inst.desired(i);
    let contested: Vec<usize> = desired.iter().copied().filter(|&j| others[j] > 0.0).collect();
    let free: Vec<usize> = desired.iter().copied().filter(|&j| others[j] <= 0.0).collect();

    if contested.is_empty() {
        // Sole positive bidder everywhere it cares: any positive bids take the whole supply.
        let share = 1.0 / desired.len() as f64;
        let mut row = vec![Bid::Zero; m];
        for &j in desired {
            row[j] = Bid::positive(f.curve(j).inverse(share));
        }
        let u = utility_with_row(inst, b, i, &row);
        return (row, u);
    }

    let cap = free.iter().map(|&j| inst.supply(j)).fold(f64::INFINITY, f64::min);
    let contested_row = |level: f64| {
        let mut row = vec![Bid::Zero; m];
        for &j in &contested {
            row[j] = Bid::positive(level * others[j] / (inst.supply(j) - level));
        }
        row
    };

    let level = max_level(inst, f, &contested, &others, 1.0, cap);
    let mut row = contested_row(level);
    for &j in &free {
        row[j] = Bid::Beta;
    }
    let mut best_u = utility_with_row(inst, b, i, &row);
    if free.is_empty() || best_u >= level * (1.0 - 1e-12) {
        return (row, best_u);
    }

    // Beta would be penalized: pay a small positive bid on each free good instead.
    let mut best_row = row;
    for reserve in [1e-10, 1e-8, 1e-6, 1e-4, 1e-2] {
        let per_good = reserve / free.len() as f64;
        let tiny: Vec<f64> = free
            .iter()
            .map(|&j| f.curve(j).inverse(per_good).max(10.0 * TOL_BID))
            .collect();
        let spent: f64 = free.iter().zip(&tiny).map(|(&j, &t)| f.curve(j).eval(t)).sum();
        if spent >= 1.0 {
            continue;
        }
        let level = max_level(inst, f, &contested, &others, 1.0 - spent, cap);
        let mut row = contested_row(level);
        for (&j, &t) in free.iter().zip(&tiny) {
            row[j] = Bid::positive(t);
        }
        let u = utility_with_row(inst, b, i, &row);
        if u > best_u {
            best_u = u;
            best_row = row;
        }
    }
    (best_row, best_u)
}

/// Highest level `t <= cap` with `sum_{contested} f_j(t B_j / (s_j - t)) <= budget`.
fn max_level(inst: &Instance, f: &CurveFamily, contested: &[usize], others: &[f64], budget: f64, cap: f64) -> f64 {
    let cost = |t: f64| -> f64 {
        contested
            .iter()
            .map(|&j| {
                let s = inst.supply(j);
                if t >= s {
                    f64::INFINITY
                } else {
                    f.curve(j).eval(t * others[j] / (s - t))
                }
            })
            .sum()
    };
    let ceiling = contested
        .iter()
        .map(|&j| inst.supply(j))
        .fold(f64::INFINITY, f64::min);
    if cap < ceiling && cost(cap) <= budget {
        return cap;
    }
    let (mut lo, mut hi) = (0.0, cap.min(ceiling));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if cost(mid) <= budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Largest utility gain any single agent obtains from its best response,
/// with the agent and its response. Gains below `TOL_BR` are not reported.
pub fn best_response_gain(inst: &Instance, f: &CurveFamily, b: &BidMatrix) -> Option<(usize, Vec<Bid>, f64)> {
    let x = allocate_unchecked(inst, b);
    let current = x.utilities(inst);
    (0..inst.n())
        .map(|i| {
            let (row, u) = best_response(inst, f, b, i);
            (i, row, u - current[i])
        })
        .filter(|(_, _, gain)| *gain > TOL_BR)
        .max_by(|a, b| a.2.total_cmp(&b.2))
}
