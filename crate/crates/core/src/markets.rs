//! Acceptance systems built from markets: superhedging under transaction
//! costs and backward-composed componentwise AV@R.

use std::collections::BTreeMap;

use crate::lp::{solve_lp, LinearProgram, LpStatus, Relation, Sense};
use crate::polyhedra::{LiftedSet, VarKind};
use crate::riskcore::{AcceptanceSystem, PenaltyValue, RiskError};
use crate::scalar::{Ext, Scalar};
use crate::tree::{AdaptedVector, ScenarioTree};

/// A solvency region at one node.
#[derive(Clone, Debug, PartialEq)]
pub enum Region<S> {
    /// `cone(generators)`.
    Cone { generators: Vec<Vec<S>> },
    /// `conv(points) + cone(generators)`.
    Convex { generators: Vec<Vec<S>>, points: Vec<Vec<S>> },
}

impl<S: Scalar> Region<S> {
    pub fn generators(&self) -> &[Vec<S>] {
        match self {
            Region::Cone { generators } | Region::Convex { generators, .. } => generators,
        }
    }

    pub fn points(&self) -> &[Vec<S>] {
        match self {
            Region::Cone { .. } => &[],
            Region::Convex { points, .. } => points,
        }
    }

    pub fn is_cone(&self) -> bool {
        matches!(self, Region::Cone { .. })
    }

    /// Bid-ask cone `cone{e₁, e₂, (−b, 1), (a, −1)}` with dual cone
    /// `{w ≥ 0 : b·w₁ ≤ w₂ ≤ a·w₁}`.
    pub fn bid_ask(bid: S, ask: S) -> Self {
        Region::Cone {
            generators: vec![
                vec![S::one(), S::zero()],
                vec![S::zero(), S::one()],
                vec![-bid, S::one()],
                vec![ask, -S::one()],
            ],
        }
    }

    /// Exchange cone in `R^d`: unit vectors plus `r·e_i − e_j` for every
    /// listed `(i, j, r)`: holding `r` units of asset `i` covers a short unit of asset `j`.
    pub fn exchange(d: usize, rates: &[(usize, usize, S)]) -> Self {
        let mut generators: Vec<Vec<S>> = (0..d)
            .map(|i| (0..d).map(|j| if i == j { S::one() } else { S::zero() }).collect())
            .collect();
        for (i, j, r) in rates {
            let mut g = vec![S::zero(); d];
            g[*i] = r.clone();
            g[*j] = -S::one();
            generators.push(g);
        }
        Region::Cone { generators }
    }

    fn check(&self, d: usize) -> Result<(), String> {
        if self.generators().iter().chain(self.points()).any(|g| g.len() != d) {
            return Err(format!("vector of wrong dimension (expected {d})"));
        }
        if let Region::Convex { points, .. } = self {
            if points.is_empty() {
                return Err("convex region without base points".into());
            }
        }
        for i in 0..d {
            let mut e = vec![S::zero(); d];
            e[i] = S::one();
            if !self.contains(&e) {
                return Err(format!("unit vector e{} is not solvent", i + 1));
            }
            if !self.recession_contains(&e) {
                return Err(format!("direction e{} is not a recession direction", i + 1));
            }
        }
        if !self.contains(&vec![S::zero(); d]) {
            return Err("zero portfolio is not solvent".into());
        }
        let big = if S::is_exact() { S::from_i64(1_000_000) } else { S::from_f64(1e6).unwrap() };
        if self.contains(&vec![-big; d]) {
            return Err("region is not proper (contains a large negative multiple of 1)".into());
        }
        Ok(())
    }

    fn lp_for(&self, target: &[S], recession: bool) -> LinearProgram<S> {
        let d = target.len();
        let mut lp = LinearProgram::new(Sense::Minimize);
        let lam: Vec<usize> = self.generators().iter().map(|_| lp.add_nonneg(S::zero())).collect();
        let mu: Vec<usize> = if recession { Vec::new() } else { self.points().iter().map(|_| lp.add_nonneg(S::zero())).collect() };
        if !mu.is_empty() {
            lp.add_constraint(mu.iter().map(|&v| (v, S::one())).collect(), Relation::Eq, S::one());
        }
        for i in 0..d {
            let mut coeffs: Vec<(usize, S)> = self.generators().iter().zip(&lam).map(|(g, &v)| (v, g[i].clone())).collect();
            coeffs.extend(self.points().iter().zip(&mu).map(|(p, &v)| (v, p[i].clone())));
            lp.add_constraint(coeffs, Relation::Eq, target[i].clone());
        }
        lp
    }

    pub fn contains(&self, x: &[S]) -> bool {
        matches!(solve_lp(&self.lp_for(x, false)).map(|o| o.status), Ok(LpStatus::Optimal))
    }

    pub fn recession_contains(&self, x: &[S]) -> bool {
        matches!(solve_lp(&self.lp_for(x, true)).map(|o| o.status), Ok(LpStatus::Optimal))
    }

    /// `inf_{k ∈ K} wᵀk`: `0`/`−∞` for cones.
    pub fn infimum(&self, w: &[S]) -> Result<Ext<S>, RiskError> {
        let mut lp = LinearProgram::new(Sense::Minimize);
        for g in self.generators() {
            lp.add_nonneg(crate::scalar::dot(g, w));
        }
        let mu: Vec<usize> = self.points().iter().map(|p| lp.add_nonneg(crate::scalar::dot(p, w))).collect();
        if !mu.is_empty() {
            lp.add_constraint(mu.iter().map(|&v| (v, S::one())).collect(), Relation::Eq, S::one());
        }
        let out = solve_lp(&lp)?;
        Ok(match out.status {
            LpStatus::Optimal => Ext::Finite(out.value.unwrap()),
            LpStatus::Unbounded => Ext::NegInf,
            LpStatus::Infeasible => Ext::PosInf,
        })
    }
}

/// One solvency region per tree node.
#[derive(Clone, Debug, PartialEq)]
pub struct SolvencyProcess<S> {
    pub regions: Vec<Region<S>>,
}

#[derive(Debug, thiserror::Error)]
pub enum MarketError {
    #[error("solvency region at node {node}: {reason}")]
    Region { node: i64, reason: String },
    #[error("solvency process has {got} regions for {expected} nodes")]
    Count { got: usize, expected: usize },
    #[error("degenerate market at node {node}: scalarization of 0 is -inf for every weight")]
    Degenerate { node: i64 },
    #[error("AV@R level {value} at node {node} outside [{epsilon}, 1]")]
    Level { node: i64, value: String, epsilon: String },
    #[error("AV@R steps need the full eligible space (m = d), got m = {m}, d = {d}")]
    NotFullSpace { m: usize, d: usize },
    #[error("ambient mismatch: {0}")]
    Ambient(String),
    #[error(transparent)]
    Risk(#[from] RiskError),
}

impl<S: Scalar> SolvencyProcess<S> {
    pub fn constant(tree: &ScenarioTree<S>, region: Region<S>) -> Self {
        SolvencyProcess { regions: vec![region; tree.len()] }
    }

    pub fn validate(&self, tree: &ScenarioTree<S>) -> Result<(), MarketError> {
        if self.regions.len() != tree.len() {
            return Err(MarketError::Count { got: self.regions.len(), expected: tree.len() });
        }
        for (n, r) in self.regions.iter().enumerate() {
            r.check(tree.d()).map_err(|reason| MarketError::Region { node: tree.id(n), reason })?;
        }
        Ok(())
    }

    pub fn is_conic(&self) -> bool {
        self.regions.iter().all(|r| r.is_cone())
    }
}

fn indicator_claim<S: Scalar>(tree: &ScenarioTree<S>, root: usize, nu: usize, v: &[S]) -> Vec<Vec<S>> {
    let base = tree.leaf_range(root);
    let inner = tree.leaf_range(nu);
    (base.start..base.end)
        .map(|k| if inner.contains(&k) { v.to_vec() } else { vec![S::zero(); v.len()] })
        .collect()
}

/// `Σ_{ν ⪰ root, time ν ∈ [from, T]} L(K(ν))` on the subtree of `root`.
pub fn solvency_sum<S: Scalar>(tree: &ScenarioTree<S>, solvency: &SolvencyProcess<S>, root: usize, from: usize) -> LiftedSet<S> {
    solvency_range_sum(tree, solvency, root, from, tree.horizon())
}

/// `Σ_{ν ⪰ root, time ν ∈ [from, until]} L(K(ν))` on the subtree of `root`.
pub fn solvency_range_sum<S: Scalar>(
    tree: &ScenarioTree<S>,
    solvency: &SolvencyProcess<S>,
    root: usize,
    from: usize,
    until: usize,
) -> LiftedSet<S> {
    let mut set = LiftedSet::zero(tree, root);
    for s in from.max(tree.time(root))..=until.min(tree.horizon()) {
        for &nu in tree.descendants_at(root, s) {
            let region = &solvency.regions[nu];
            if !region.points().is_empty() {
                let pts: Vec<Vec<Vec<S>>> = region.points().iter().map(|p| indicator_claim(tree, root, nu, p)).collect();
                set.add_hull_block(&pts).expect("shape");
            }
            for g in region.generators() {
                set.add_generator(&indicator_claim(tree, root, nu, g)).expect("shape");
            }
        }
    }
    set
}

/// The superhedging acceptance system `A_t = Σ_{s=t}^T L(K_s)` with stepped
/// sets `A_{t,s} = A_t ∩ M_s`.
pub fn superhedging_system<S: Scalar>(
    tree: &ScenarioTree<S>,
    solvency: &SolvencyProcess<S>,
) -> Result<AcceptanceSystem<S>, MarketError> {
    solvency.validate(tree)?;
    let sets: Vec<LiftedSet<S>> = (0..tree.len()).map(|n| solvency_sum(tree, solvency, n, tree.time(n))).collect();
    let mut stepped = BTreeMap::new();
    for n in 0..tree.len() {
        for s in tree.time(n) + 1..=tree.horizon() {
            stepped.insert((n, s), sets[n].restrict_measurable(tree, s));
        }
    }
    let label = if solvency.is_conic() { "superhedging (conic)" } else { "superhedging (convex)" };
    let system = AcceptanceSystem::new(tree.clone(), sets, stepped, label)?;
    for n in 0..tree.len() {
        if !system.zero_risk_bounded_somewhere(n)? {
            return Err(MarketError::Degenerate { node: tree.id(n) });
        }
    }
    Ok(system)
}

/// `σ_t^s(w_s) = essinf_{k ∈ L(K_s)} E[w_sᵀk | 𝓕_t]` per time-`t` node.
pub fn market_penalty_sigma<S: Scalar>(
    tree: &ScenarioTree<S>,
    solvency: &SolvencyProcess<S>,
    t: usize,
    w_s: &AdaptedVector<S>,
) -> Result<PenaltyValue<S>, MarketError> {
    let s = w_s.time;
    assert!(t <= s, "sigma needs t <= s");
    let values = tree
        .nodes_at(t)
        .iter()
        .map(|&n| {
            let mut acc = Ext::Finite(S::zero());
            for &nu in tree.descendants_at(n, s) {
                let inf = solvency.regions[nu].infimum(w_s.at(tree, nu))?;
                let term = inf.scale(&tree.cond_prob(nu, n));
                acc = acc.try_add(&term).map_err(|_| RiskError::Undefined("sigma".into()))?;
            }
            Ok(acc)
        })
        .collect::<Result<_, MarketError>>()?;
    Ok(PenaltyValue { time: t, values })
}

/// AV@R levels `λ^t(n)` per non-leaf node.
#[derive(Clone, Debug, PartialEq)]
pub struct AvarLevels<S> {
    pub epsilon: S,
    /// Indexed by node; leaves carry no level.
    pub lambda: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> AvarLevels<S> {
    pub fn default_epsilon() -> S {
        S::ratio(1, 100)
    }

    pub fn constant(tree: &ScenarioTree<S>, lambda: &[S]) -> Self {
        AvarLevels {
            epsilon: Self::default_epsilon(),
            lambda: (0..tree.len())
                .map(|n| if tree.time(n) < tree.horizon() { Some(lambda.to_vec()) } else { None })
                .collect(),
        }
    }

    pub fn validate(&self, tree: &ScenarioTree<S>) -> Result<(), MarketError> {
        if self.lambda.len() != tree.len() {
            return Err(MarketError::Ambient(format!("{} level entries for {} nodes", self.lambda.len(), tree.len())));
        }
        for n in 0..tree.len() {
            match (&self.lambda[n], tree.time(n) < tree.horizon()) {
                (Some(l), true) => {
                    if l.len() != tree.d() {
                        return Err(MarketError::Ambient(format!("levels at node {} have dimension {}", tree.id(n), l.len())));
                    }
                    for v in l {
                        if *v < self.epsilon || *v > S::one() {
                            return Err(MarketError::Level {
                                node: tree.id(n),
                                value: v.to_string(),
                                epsilon: self.epsilon.to_string(),
                            });
                        }
                    }
                }
                (None, true) => return Err(MarketError::Ambient(format!("no AV@R level at node {}", tree.id(n)))),
                _ => {}
            }
        }
        Ok(())
    }
}

/// One-step componentwise AV@R acceptance set at node `n`:
/// `{Z ∈ M_{t+1} : ∃ z, z_i + (1/λ_i) E[(−Z_i − z_i)^+ | 𝓕_t] ≤ 0}`.
pub fn avar_step_set<S: Scalar>(tree: &ScenarioTree<S>, n: usize, lambda: &[S]) -> LiftedSet<S> {
    let d = tree.d();
    let t = tree.time(n);
    let base = tree.leaf_range(n).start;
    let mut set = LiftedSet::zero(tree, n);
    let children = tree.descendants_at(n, t + 1).to_vec();
    let zvars: Vec<Vec<usize>> = children
        .iter()
        .map(|&nu| {
            (0..d)
                .map(|i| {
                    let v = set.add_var(VarKind::Free);
                    for k in tree.leaf_range(nu) {
                        set.add_image(k - base, i, v, S::one());
                    }
                    v
                })
                .collect()
        })
        .collect();
    for i in 0..d {
        let z = set.add_var(VarKind::Free);
        let mut budget = vec![(z, S::one())];
        for (c, &nu) in children.iter().enumerate() {
            let slack = set.add_var(VarKind::NonNeg);
            set.add_row(vec![(slack, S::one()), (zvars[c][i], S::one()), (z, S::one())], Relation::Ge, S::zero());
            budget.push((slack, tree.cond_prob(nu, n) / lambda[i].clone()));
        }
        set.add_row(budget, Relation::Le, S::zero());
    }
    set
}

/// `Â_T = A_T`, `Â_t = A_{t,t+1} ⊕ Â_{t+1}`. Stepped sets are partial sums of
/// the one-step sets.
pub fn compose_backward<S: Scalar>(
    tree: &ScenarioTree<S>,
    steps: &[Option<LiftedSet<S>>],
    terminal: Option<Vec<LiftedSet<S>>>,
    label: &str,
) -> Result<AcceptanceSystem<S>, MarketError> {
    if steps.len() != tree.len() {
        return Err(MarketError::Ambient(format!("{} step sets for {} nodes", steps.len(), tree.len())));
    }
    let terminal = terminal.unwrap_or_else(|| tree.leaves().iter().map(|&l| LiftedSet::orthant(tree, l)).collect());
    if terminal.len() != tree.num_leaves() {
        return Err(MarketError::Ambient("terminal sets do not match the leaves".into()));
    }
    let mut sets: Vec<Option<LiftedSet<S>>> = vec![None; tree.len()];
    for (k, &l) in tree.leaves().iter().enumerate() {
        if terminal[k].root() != l {
            return Err(MarketError::Ambient(format!("terminal set {k} is not rooted at its leaf")));
        }
        sets[l] = Some(terminal[k].clone());
    }
    let mut stepped: BTreeMap<(usize, usize), LiftedSet<S>> = BTreeMap::new();
    for t in (0..tree.horizon()).rev() {
        for &n in tree.nodes_at(t) {
            let step = steps[n]
                .as_ref()
                .ok_or_else(|| MarketError::Ambient(format!("missing step set at node {}", tree.id(n))))?;
            if step.root() != n {
                return Err(MarketError::Ambient(format!("step set at node {} has the wrong root", tree.id(n))));
            }
            let mut acc = step.clone();
            for &nu in tree.descendants_at(n, t + 1) {
                let child = sets[nu].as_ref().unwrap().embed(tree, n).map_err(|e| MarketError::Ambient(e.to_string()))?;
                acc = acc.minkowski_sum(&child).map_err(|e| MarketError::Ambient(e.to_string()))?;
            }
            sets[n] = Some(acc);
            stepped.insert((n, t + 1), step.clone());
            for s in t + 2..=tree.horizon() {
                let mut part = step.clone();
                for &nu in tree.descendants_at(n, t + 1) {
                    let child = stepped[&(nu, s)].embed(tree, n).map_err(|e| MarketError::Ambient(e.to_string()))?;
                    part = part.minkowski_sum(&child).map_err(|e| MarketError::Ambient(e.to_string()))?;
                }
                stepped.insert((n, s), part);
            }
        }
    }
    let sets = sets.into_iter().map(|s| s.unwrap()).collect();
    Ok(AcceptanceSystem::new(tree.clone(), sets, stepped, label)?)
}

/// Backward-composed componentwise AV@R.
pub fn composed_avar_system<S: Scalar>(tree: &ScenarioTree<S>, levels: &AvarLevels<S>) -> Result<AcceptanceSystem<S>, MarketError> {
    if tree.m() != tree.d() {
        return Err(MarketError::NotFullSpace { m: tree.m(), d: tree.d() });
    }
    levels.validate(tree)?;
    let steps: Vec<Option<LiftedSet<S>>> = (0..tree.len())
        .map(|n| levels.lambda[n].as_ref().map(|l| avar_step_set(tree, n, l)))
        .collect();
    compose_backward(tree, &steps, None, "composed AV@R")
}
