//! Fixed and random instances used by tests, demos and the CLI.

use rand::seq::index::sample;
use rand::Rng;

use crate::model::Instance;

/// The five-agent, seven-good strategyproofness counterexample.
///
/// Agents 0..=2 share good 6 (supply 2); agents 3 and 4 each cross all three.
/// With `lie` set, agent 3 additionally claims good 6.
pub fn counterexample(lie: bool) -> Instance {
    let mut agent3 = vec![0, 2, 4];
    if lie {
        agent3.push(6);
    }
    Instance::new(
        vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 2.0],
        vec![vec![0, 1, 6], vec![2, 3, 6], vec![4, 5, 6], agent3, vec![1, 3, 5]],
    )
    .expect("static instance is valid")
}

/// `n` agents, `n` unit-supply goods, agent `i` requires only good `i`.
pub fn diagonal(n: usize) -> Instance {
    Instance::new(vec![1.0; n], (0..n).map(|i| vec![i]).collect()).expect("n >= 1")
}

/// Random valid instance with `1..=max_n` agents, `1..=max_m` goods and
/// integer supplies in `1..=max_supply`.
pub fn random_instance<R: Rng + ?Sized>(rng: &mut R, max_n: usize, max_m: usize, max_supply: u32) -> Instance {
    let n = rng.random_range(1..=max_n);
    let m = rng.random_range(1..=max_m);
    random_instance_sized(rng, n, m, max_supply)
}

pub fn random_instance_sized<R: Rng + ?Sized>(rng: &mut R, n: usize, m: usize, max_supply: u32) -> Instance {
    let supplies: Vec<f64> = (0..m)
        .map(|_| f64::from(rng.random_range(1..=max_supply)))
        .collect();
    let mut desired: Vec<Vec<usize>> = (0..n)
        .map(|_| {
            let k = rng.random_range(1..=m);
            sample(rng, m, k).into_vec()
        })
        .collect();
    for j in 0..m {
        if !desired.iter().any(|set| set.contains(&j)) {
            let i = rng.random_range(0..n);
            desired[i].push(j);
        }
    }
    Instance::new(supplies, desired).expect("generated instance is valid")
}
