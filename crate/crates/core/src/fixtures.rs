//! Hand fixtures and seeded random generators for trees, markets, claims
//! and weights.

use std::collections::BTreeMap;

use rand::Rng;

use crate::markets::{solvency_range_sum, superhedging_system, AvarLevels, MarketError, Region, SolvencyProcess};
use crate::riskcore::AcceptanceSystem;
use crate::scalar::Scalar;
use crate::tree::{uniform_branching, AdaptedVector, RawNode, RawTree, ScenarioTree, TerminalClaim};

/// One period, two equally likely states `u` (id 1) and `d` (id 2), `d = m = 2`.
pub fn bin1_tree<S: Scalar>() -> ScenarioTree<S> {
    uniform_branching(2, 2, &[vec![S::ratio(1, 2), S::ratio(1, 2)]])
}

/// `X(u) = (1, 0)`, `X(d) = (−2, 1)`.
pub fn bin1_claim<S: Scalar>(tree: &ScenarioTree<S>) -> TerminalClaim<S> {
    TerminalClaim::new(tree, vec![vec![S::one(), S::zero()], vec![S::from_i64(-2), S::one()]]).expect("bin1 shape")
}

/// Frictionless exchange at rate one everywhere.
pub fn frictionless<S: Scalar>(tree: &ScenarioTree<S>) -> SolvencyProcess<S> {
    SolvencyProcess::constant(tree, Region::bid_ask(S::one(), S::one()))
}

/// Two periods of two equally likely branches with `d = 2` and the given `m`.
pub fn bin2_tree<S: Scalar>(m: usize) -> ScenarioTree<S> {
    let half = vec![S::ratio(1, 2), S::ratio(1, 2)];
    uniform_branching(2, m, &[half.clone(), half])
}

/// Bid-ask spreads that depend on the branch, in hundredths, per node id.
pub const BIN2_SPREADS: [(i64, i64); 7] = [(90, 110), (100, 120), (80, 95), (95, 125), (105, 115), (75, 90), (85, 100)];

pub fn bin2_market<S: Scalar>(tree: &ScenarioTree<S>) -> SolvencyProcess<S> {
    let regions = (0..tree.len())
        .map(|n| {
            let (b, a) = BIN2_SPREADS[tree.id(n) as usize % BIN2_SPREADS.len()];
            Region::bid_ask(S::ratio(b, 100), S::ratio(a, 100))
        })
        .collect();
    SolvencyProcess { regions }
}

/// The superhedging system of [`bin2_market`].
pub fn bin2_superhedging<S: Scalar>(m: usize) -> AcceptanceSystem<S> {
    let tree = bin2_tree(m);
    superhedging_system(&tree, &bin2_market(&tree)).expect("bin2 market is valid")
}

/// Random tree with horizon in `1..=max_horizon`, between two and
/// `max_branch` children per node and small rational probabilities.
pub fn random_tree<S: Scalar, R: Rng>(rng: &mut R, max_horizon: usize, max_branch: usize, d: usize, m: usize) -> ScenarioTree<S> {
    let horizon = rng.gen_range(1..=max_horizon);
    let mut nodes = vec![RawNode { id: 0, time: 0, parent: None, prob: S::one() }];
    let mut frontier = vec![(0i64, (1i64, 1i64))];
    let mut next_id = 1;
    for t in 1..=horizon {
        let mut next = Vec::new();
        for (parent, (pn, pd)) in frontier {
            let k = rng.gen_range(2..=max_branch.max(2));
            let raw: Vec<i64> = (0..k).map(|_| rng.gen_range(1..=3)).collect();
            let total: i64 = raw.iter().sum();
            for r in raw {
                let (cn, cd) = (pn * r, pd * total);
                nodes.push(RawNode { id: next_id, time: t, parent: Some(parent), prob: S::ratio(cn, cd) });
                next.push((next_id, (cn, cd)));
                next_id += 1;
            }
        }
        frontier = next;
    }
    ScenarioTree::from_raw(RawTree { d, m, horizon, nodes }).expect("generated tree is valid")
}

/// An exchange cone around `prices` with random proportional costs of up
/// to 20%. The price vector lies in the dual cone.
pub fn random_cone<S: Scalar, R: Rng>(rng: &mut R, prices: &[i64]) -> Region<S> {
    let d = prices.len();
    let mut rates = Vec::new();
    for i in 0..d {
        for j in 0..d {
            if i != j {
                let cost = rng.gen_range(0..=4);
                rates.push((i, j, S::ratio(prices[j] * (20 + cost), prices[i] * 20)));
            }
        }
    }
    Region::exchange(d, &rates)
}

/// Random market free of arbitrage: one price vector in `2..=8` shared by
/// all nodes, exchange cones with node-dependent costs, widened by a small
/// base-point shortfall when `conic` is false.
pub fn random_market<S: Scalar, R: Rng>(tree: &ScenarioTree<S>, rng: &mut R, conic: bool) -> SolvencyProcess<S> {
    let d = tree.d();
    let prices: Vec<i64> = (0..d).map(|_| rng.gen_range(2..=8)).collect();
    let regions = (0..tree.len())
        .map(|_| {
            let cone = random_cone(rng, &prices);
            if conic {
                cone
            } else {
                let mut shortfall = vec![S::zero(); d];
                shortfall[rng.gen_range(0..d)] = S::ratio(-rng.gen_range(1..=3), 10);
                Region::Convex { generators: cone.generators().to_vec(), points: vec![vec![S::zero(); d], shortfall] }
            }
        })
        .collect();
    SolvencyProcess { regions }
}

/// A smaller region: the positive side of every trading generator is
/// multiplied by `factor > 1`.
pub fn shrink_region<S: Scalar>(region: &Region<S>, factor: &S) -> Region<S> {
    let shrink = |g: &Vec<S>| -> Vec<S> {
        if g.iter().any(|x| *x < S::zero()) {
            g.iter().map(|x| if *x > S::zero() { x.clone() * factor.clone() } else { x.clone() }).collect()
        } else {
            g.clone()
        }
    };
    match region {
        Region::Cone { generators } => Region::Cone { generators: generators.iter().map(shrink).collect() },
        Region::Convex { generators, points } => {
            Region::Convex { generators: generators.iter().map(shrink).collect(), points: points.clone() }
        }
    }
}

pub fn shrink_market<S: Scalar>(solvency: &SolvencyProcess<S>, factor: &S) -> SolvencyProcess<S> {
    SolvencyProcess { regions: solvency.regions.iter().map(|r| shrink_region(r, factor)).collect() }
}

/// How the stepped sets of a broken fixture are rebuilt from the shrunk market.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BrokenKind {
    /// `Σ_{r=t}^{s−1} L(K'_r)` in generator form.
    Generators,
    /// `A'_t ∩ M_s` for the superhedging sets `A'` of the shrunk market.
    Restricted,
}

/// The superhedging system of `solvency` with its stepped sets replaced by
/// those of the market shrunk by `factor` (see [`shrink_region`]).
pub fn broken_superhedging<S: Scalar>(
    tree: &ScenarioTree<S>,
    solvency: &SolvencyProcess<S>,
    factor: &S,
    kind: BrokenKind,
) -> Result<AcceptanceSystem<S>, MarketError> {
    let system = superhedging_system(tree, solvency)?;
    let shrunk = shrink_market(solvency, factor);
    let mut replace = BTreeMap::new();
    match kind {
        BrokenKind::Generators => {
            for n in 0..tree.len() {
                for s in tree.time(n) + 1..=tree.horizon() {
                    replace.insert((n, s), solvency_range_sum(tree, &shrunk, n, tree.time(n), s - 1));
                }
            }
        }
        BrokenKind::Restricted => {
            let other = superhedging_system(tree, &shrunk)?;
            for (k, v) in other.stepped_sets() {
                replace.insert(*k, v.clone());
            }
        }
    }
    Ok(system.with_stepped(replace, "superhedging with shrunk stepped sets")?)
}

/// Claim with entries in `{−3, −5/2, …, 3}`.
pub fn random_claim<S: Scalar, R: Rng>(tree: &ScenarioTree<S>, rng: &mut R) -> TerminalClaim<S> {
    let values = (0..tree.num_leaves()).map(|_| (0..tree.d()).map(|_| S::ratio(rng.gen_range(-6..=6), 2)).collect()).collect();
    TerminalClaim { values }
}

/// Weight field at time `t` with small integer eligible components, one of
/// them positive at every node, and zero ineligible components.
pub fn random_weight<S: Scalar, R: Rng>(tree: &ScenarioTree<S>, t: usize, rng: &mut R) -> AdaptedVector<S> {
    let (d, m) = (tree.d(), tree.m());
    let values = tree
        .nodes_at(t)
        .iter()
        .map(|_| {
            let mut w = vec![S::zero(); d];
            for x in w[..m].iter_mut() {
                *x = S::from_i64(rng.gen_range(0..=3));
            }
            w[rng.gen_range(0..m)] = S::from_i64(rng.gen_range(1..=3));
            w
        })
        .collect();
    AdaptedVector { time: t, values }
}

/// Levels `λ = k/10` with `k ∈ 1..=10` per asset and non-leaf node.
pub fn random_avar_levels<S: Scalar, R: Rng>(tree: &ScenarioTree<S>, rng: &mut R) -> AvarLevels<S> {
    let lambda = (0..tree.len())
        .map(|n| (tree.time(n) < tree.horizon()).then(|| (0..tree.d()).map(|_| S::ratio(rng.gen_range(1..=10), 10)).collect()))
        .collect();
    AvarLevels { epsilon: AvarLevels::<S>::default_epsilon(), lambda }
}
