//! Instances, allocations, bandwidth utilities and CES welfare.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// A bandwidth allocation problem: link supplies and each agent's required links.
///
/// Goods are indexed from 0. Every agent requires at least one good and every
/// good is required by at least one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InstanceFile", into = "InstanceFile")]
pub struct Instance {
    supplies: Vec<f64>,
    desired: Vec<Vec<usize>>,
    weights: Vec<Vec<bool>>,
}

#[derive(Serialize, Deserialize)]
struct InstanceFile {
    supplies: Vec<f64>,
    agents: Vec<AgentEntry>,
}

#[derive(Serialize, Deserialize)]
struct AgentEntry {
    desired: Vec<usize>,
}

impl TryFrom<InstanceFile> for Instance {
    type Error = ModelError;

    fn try_from(file: InstanceFile) -> Result<Self, Self::Error> {
        Instance::new(
            file.supplies,
            file.agents.into_iter().map(|a| a.desired).collect(),
        )
    }
}

impl From<Instance> for InstanceFile {
    fn from(inst: Instance) -> Self {
        InstanceFile {
            supplies: inst.supplies,
            agents: inst
                .desired
                .into_iter()
                .map(|desired| AgentEntry { desired })
                .collect(),
        }
    }
}

impl Instance {
    pub fn new(supplies: Vec<f64>, desired: Vec<Vec<usize>>) -> Result<Self, ModelError> {
        let m = supplies.len();
        if m == 0 || desired.is_empty() {
            return Err(ModelError::Empty);
        }
        for (good, &value) in supplies.iter().enumerate() {
            if !(value.is_finite() && value > 0.0) {
                return Err(ModelError::BadSupply { good, value });
            }
        }
        let mut weights = vec![vec![false; m]; desired.len()];
        let mut sets = Vec::with_capacity(desired.len());
        for (agent, mut set) in desired.into_iter().enumerate() {
            set.sort_unstable();
            set.dedup();
            if set.is_empty() {
                return Err(ModelError::EmptyDesiredSet(agent));
            }
            for &good in &set {
                if good >= m {
                    return Err(ModelError::GoodOutOfRange { agent, good, m });
                }
                weights[agent][good] = true;
            }
            sets.push(set);
        }
        if let Some(good) = (0..m).find(|&j| weights.iter().all(|row| !row[j])) {
            return Err(ModelError::UndesiredGood(good));
        }
        Ok(Self {
            supplies,
            desired: sets,
            weights,
        })
    }

    pub fn n(&self) -> usize {
        self.desired.len()
    }

    pub fn m(&self) -> usize {
        self.supplies.len()
    }

    pub fn supplies(&self) -> &[f64] {
        &self.supplies
    }

    pub fn supply(&self, good: usize) -> f64 {
        self.supplies[good]
    }

    /// Sorted required goods of agent `i`.
    pub fn desired(&self, i: usize) -> &[usize] {
        &self.desired[i]
    }

    pub fn desired_sets(&self) -> &[Vec<usize>] {
        &self.desired
    }

    pub fn desires(&self, i: usize, j: usize) -> bool {
        self.weights[i][j]
    }

    /// Binary weight `w_ij`.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        if self.weights[i][j] {
            1.0
        } else {
            0.0
        }
    }

    /// Agents requiring good `j`.
    pub fn desirers(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n()).filter(move |&i| self.weights[i][j])
    }

    pub fn demand_count(&self, j: usize) -> usize {
        self.desirers(j).count()
    }

    /// The largest utility agent `i` could ever receive: the scarcest required supply.
    pub fn max_utility(&self, i: usize) -> f64 {
        self.desired[i]
            .iter()
            .map(|&j| self.supplies[j])
            .fold(f64::INFINITY, f64::min)
    }

    /// Same desired sets with all supplies multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self, ModelError> {
        Instance::new(
            self.supplies.iter().map(|s| s * c).collect(),
            self.desired.clone(),
        )
    }

    /// Same supplies with agent `i`'s desired set replaced.
    pub fn with_desired(&self, i: usize, set: Vec<usize>) -> Result<Self, ModelError> {
        if i >= self.n() {
            return Err(ModelError::AgentOutOfRange {
                index: i,
                n: self.n(),
            });
        }
        let mut desired = self.desired.clone();
        desired[i] = set;
        Instance::new(self.supplies.clone(), desired)
    }

    /// The allocation `x_ij = w_ij * u_i`.
    pub fn leontief_allocation(&self, utilities: &[f64]) -> Allocation {
        let rows = (0..self.n())
            .map(|i| {
                (0..self.m())
                    .map(|j| self.weight(i, j) * utilities[i])
                    .collect()
            })
            .collect();
        Allocation { rows }
    }
}

/// An `n x m` matrix of nonnegative quantities.
///
/// Supply feasibility is not enforced on construction because some callers
/// (equilibrium checks) need to inspect infeasible candidates; use
/// [`Allocation::max_supply_violation`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Allocation {
    rows: Vec<Vec<f64>>,
}

impl TryFrom<Vec<Vec<f64>>> for Allocation {
    type Error = ModelError;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        Allocation::new(rows)
    }
}

impl From<Allocation> for Vec<Vec<f64>> {
    fn from(a: Allocation) -> Self {
        a.rows
    }
}

impl Allocation {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        let m = rows.first().map_or(0, Vec::len);
        for (agent, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(ModelError::ShapeMismatch {
                    expected: m,
                    got: row.len(),
                });
            }
            for (good, &value) in row.iter().enumerate() {
                if !(value.is_finite() && value >= 0.0) {
                    return Err(ModelError::NegativeQuantity { agent, good, value });
                }
            }
        }
        Ok(Self { rows })
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            rows: vec![vec![0.0; m]; n],
        }
    }

    pub(crate) fn from_rows_unchecked(rows: Vec<Vec<f64>>) -> Self {
        Self { rows }
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i][j]
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn m(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn column_total(&self, j: usize) -> f64 {
        self.rows.iter().map(|r| r[j]).sum()
    }

    /// Largest amount by which any good is over-allocated (0 when feasible).
    pub fn max_supply_violation(&self, supplies: &[f64]) -> f64 {
        supplies
            .iter()
            .enumerate()
            .map(|(j, s)| (self.column_total(j) - s).max(0.0))
            .fold(0.0, f64::max)
    }

    pub fn is_feasible(&self, supplies: &[f64], tol: f64) -> bool {
        self.m() == supplies.len() && self.max_supply_violation(supplies) <= tol
    }

    /// Per-agent utilities under `inst`.
    pub fn utilities(&self, inst: &Instance) -> Vec<f64> {
        (0..inst.n())
            .map(|i| min_over(inst.desired(i), &self.rows[i]))
            .collect()
    }

    /// Largest entrywise absolute difference.
    pub fn max_abs_diff(&self, other: &Allocation) -> f64 {
        self.rows
            .iter()
            .flatten()
            .zip(other.rows.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn min_over(goods: &[usize], x: &[f64]) -> f64 {
    goods.iter().map(|&j| x[j]).fold(f64::INFINITY, f64::min)
}

/// Bandwidth utility `min_{j in R_i} x_ij`.
pub fn utility(inst: &Instance, i: usize, bundle: &[f64]) -> Result<f64, ModelError> {
    if i >= inst.n() {
        return Err(ModelError::AgentOutOfRange {
            index: i,
            n: inst.n(),
        });
    }
    if bundle.len() != inst.m() {
        return Err(ModelError::ShapeMismatch {
            expected: inst.m(),
            got: bundle.len(),
        });
    }
    if let Some((good, &value)) = bundle
        .iter()
        .enumerate()
        .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
    {
        return Err(ModelError::NegativeQuantity {
            agent: i,
            good,
            value,
        });
    }
    Ok(min_over(inst.desired(i), bundle))
}

/// CES welfare parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rho {
    /// Maxmin welfare.
    NegInfinity,
    /// `rho < 1`; zero is Nash welfare.
    Finite(f64),
    /// Utilitarian welfare.
    One,
}

impl Rho {
    pub fn finite(rho: f64) -> Result<Self, ModelError> {
        if rho.is_finite() && rho < 1.0 {
            Ok(Rho::Finite(rho))
        } else {
            Err(ModelError::BadRho(rho))
        }
    }

    /// Exponent `1 - rho` of the price and constraint curves for finite rho.
    pub fn curve_degree(self) -> Option<f64> {
        match self {
            Rho::Finite(r) => Some(1.0 - r),
            _ => None,
        }
    }
}

impl fmt::Display for Rho {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rho::NegInfinity => f.write_str("-inf"),
            Rho::Finite(r) => write!(f, "{r}"),
            Rho::One => f.write_str("1"),
        }
    }
}

impl FromStr for Rho {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        match t {
            "-inf" | "-infinity" | "maxmin" => return Ok(Rho::NegInfinity),
            "nash" => return Ok(Rho::Finite(0.0)),
            "utilitarian" => return Ok(Rho::One),
            _ => {}
        }
        let v: f64 = t.parse().map_err(|_| ModelError::RhoParse(s.to_string()))?;
        if v == 1.0 {
            Ok(Rho::One)
        } else if v == f64::NEG_INFINITY {
            Ok(Rho::NegInfinity)
        } else {
            Rho::finite(v)
        }
    }
}

impl Serialize for Rho {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Rho::Finite(r) => s.serialize_f64(*r),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

/// CES welfare of a utility vector.
///
/// For negative rho a zero utility gives welfare 0 (the limit value). For
/// small positive rho the value grows like `n^(1/rho)` and can overflow to
/// infinity.
pub fn ces_welfare(rho: Rho, u: &[f64]) -> f64 {
    debug_assert!(!u.is_empty());
    match rho {
        Rho::NegInfinity => u.iter().copied().fold(f64::INFINITY, f64::min),
        Rho::One => u.iter().sum(),
        Rho::Finite(0.0) => {
            if u.iter().any(|&v| v <= 0.0) {
                return 0.0;
            }
            (u.iter().map(|v| v.ln()).sum::<f64>() / u.len() as f64).exp()
        }
        Rho::Finite(r) => {
            if r < 0.0 && u.iter().any(|&v| v <= 0.0) {
                return 0.0;
            }
            u.iter().map(|v| v.powf(r)).sum::<f64>().powf(1.0 / r)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn inst(supplies: Vec<f64>, desired: Vec<Vec<usize>>) -> Instance {
        Instance::new(supplies, desired).unwrap()
    }

    #[test]
    fn utility_examples() {
        let a = inst(vec![1.0, 1.0], vec![vec![0, 1]]);
        assert_eq!(utility(&a, 0, &[0.3, 0.7]).unwrap(), 0.3);
        let b = inst(vec![1.0, 1.0, 1.0], vec![vec![2], vec![0, 1]]);
        assert_eq!(utility(&b, 0, &[5.0, 5.0, 0.0]).unwrap(), 0.0);
        let c = inst(vec![1.0, 1.0], vec![vec![0], vec![1]]);
        assert_eq!(utility(&c, 0, &[1.0, 99.0]).unwrap(), 1.0);
    }

    #[test]
    fn utility_errors() {
        let a = inst(vec![1.0], vec![vec![0]]);
        assert!(matches!(
            utility(&a, 3, &[1.0]),
            Err(ModelError::AgentOutOfRange { index: 3, n: 1 })
        ));
        assert!(matches!(
            utility(&a, 0, &[1.0, 2.0]),
            Err(ModelError::ShapeMismatch { .. })
        ));
        assert!(utility(&a, 0, &[-1.0]).is_err());
    }

    #[test]
    fn instance_validation() {
        assert_eq!(Instance::new(vec![], vec![vec![0]]), Err(ModelError::Empty));
        assert!(matches!(
            Instance::new(vec![0.0], vec![vec![0]]),
            Err(ModelError::BadSupply { good: 0, .. })
        ));
        assert_eq!(
            Instance::new(vec![1.0], vec![vec![]]),
            Err(ModelError::EmptyDesiredSet(0))
        );
        assert_eq!(
            Instance::new(vec![1.0, 1.0], vec![vec![0]]),
            Err(ModelError::UndesiredGood(1))
        );
        assert!(matches!(
            Instance::new(vec![1.0], vec![vec![0, 4]]),
            Err(ModelError::GoodOutOfRange { good: 4, .. })
        ));
        let ok = inst(vec![1.0, 2.0], vec![vec![1, 0, 1]]);
        assert_eq!(ok.desired(0), &[0, 1]);
        assert_eq!(ok.max_utility(0), 1.0);
    }

    #[test]
    fn instance_json_format() {
        let text = r#"{"supplies":[1.0,2.0],"agents":[{"desired":[0]},{"desired":[0,1]}]}"#;
        let parsed: Instance = serde_json::from_str(text).unwrap();
        assert_eq!(parsed.n(), 2);
        assert!(parsed.desires(1, 1));
        assert_eq!(serde_json::to_string(&parsed).unwrap(), text);
        let bad = r#"{"supplies":[1.0,2.0],"agents":[{"desired":[0]}]}"#;
        assert!(serde_json::from_str::<Instance>(bad).is_err());
    }

    #[test]
    fn rho_parsing() {
        assert_eq!("-inf".parse::<Rho>().unwrap(), Rho::NegInfinity);
        assert_eq!("maxmin".parse::<Rho>().unwrap(), Rho::NegInfinity);
        assert_eq!("1".parse::<Rho>().unwrap(), Rho::One);
        assert_eq!("-0.5".parse::<Rho>().unwrap(), Rho::Finite(-0.5));
        assert!("1.5".parse::<Rho>().is_err());
        assert!("abc".parse::<Rho>().is_err());
        assert!(Rho::finite(1.0).is_err());
    }

    #[test]
    fn welfare_examples() {
        assert_eq!(ces_welfare(Rho::One, &[1.0, 1.0]), 2.0);
        assert!((ces_welfare(Rho::Finite(-1.0), &[1.0, 1.0]) - 0.5).abs() < 1e-15);
        assert!((ces_welfare(Rho::Finite(0.0), &[1.0, 4.0]) - 2.0).abs() < 1e-12);
        assert_eq!(ces_welfare(Rho::NegInfinity, &[0.2, 0.9]), 0.2);
        assert_eq!(ces_welfare(Rho::Finite(-2.0), &[0.0, 0.9]), 0.0);
        assert_eq!(ces_welfare(Rho::Finite(0.0), &[0.0, 0.9]), 0.0);
    }

    #[test]
    fn allocation_checks() {
        assert!(Allocation::new(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(Allocation::new(vec![vec![-0.1]]).is_err());
        let a = Allocation::new(vec![vec![0.6, 0.0], vec![0.5, 0.2]]).unwrap();
        assert!((a.max_supply_violation(&[1.0, 1.0]) - 0.1).abs() < 1e-12);
        assert!(!a.is_feasible(&[1.0, 1.0], 1e-9));
        assert!(a.is_feasible(&[1.1, 1.0], 1e-9));
    }

    fn rho_strategy() -> impl Strategy<Value = Rho> {
        prop_oneof![
            Just(Rho::NegInfinity),
            Just(Rho::One),
            Just(Rho::Finite(0.0)),
            (-5.0f64..0.99).prop_map(Rho::Finite),
        ]
    }

    proptest! {
        #[test]
        fn welfare_of_constant_vector(c in 0.01f64..10.0, n in 1usize..8, rho in rho_strategy()) {
            let u = vec![c; n];
            let w = ces_welfare(rho, &u);
            let expected = match rho {
                Rho::Finite(r) if r != 0.0 => (n as f64).powf(1.0 / r) * c,
                Rho::One => n as f64 * c,
                _ => c,
            };
            prop_assume!(expected.is_finite());
            // Rounding in the inner sum is amplified by the 1/rho exponent.
            let amplification = match rho {
                Rho::Finite(r) if r != 0.0 => 1.0 / r.abs(),
                _ => 1.0,
            };
            prop_assert!((w / expected - 1.0).abs() <= 1e-13 * amplification.max(1.0));
        }

        #[test]
        fn utility_is_monotone(x in proptest::collection::vec(0.0f64..5.0, 3), j in 0usize..3, d in 0.0f64..2.0) {
            let a = inst(vec![1.0, 1.0, 1.0], vec![vec![0, 2], vec![1]]);
            let mut y = x.clone();
            y[j] += d;
            for i in 0..2 {
                prop_assert!(utility(&a, i, &y).unwrap() >= utility(&a, i, &x).unwrap());
            }
        }
    }
}
