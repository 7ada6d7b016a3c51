//! Scalarized multivariate risk measures on a scenario tree.

use std::collections::BTreeMap;

use rand::Rng;
use serde_json::{json, Value};

use crate::lp::{solve_lp, LinearProgram, LpStatus, Relation, Sense};
use crate::polyhedra::{LinExpr, LiftedSet, PolyError};
use crate::scalar::{Ext, Num, Scalar};
use crate::tree::{weight_transport, AdaptedVector, MeasureVector, ScenarioTree, TerminalClaim};

/// The eligible subspace `M = R^m × {0}^{d−m}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EligibleSpace {
    pub d: usize,
    pub m: usize,
}

impl EligibleSpace {
    pub fn new(d: usize, m: usize) -> Self {
        assert!(m >= 1 && m <= d, "need 1 <= m <= d");
        EligibleSpace { d, m }
    }

    pub fn is_full(&self) -> bool {
        self.m == self.d
    }

    /// Zeroes components beyond `m`.
    pub fn canonicalize<S: Scalar>(&self, w: &[S]) -> Vec<S> {
        w.iter().enumerate().map(|(i, x)| if i < self.m { x.clone() } else { S::zero() }).collect()
    }

    /// `w ∈ M_+^+ \ M^⊥`: eligible part nonnegative and nonzero.
    pub fn check_weight<S: Scalar>(&self, w: &[S]) -> Result<(), String> {
        if w.len() != self.d {
            return Err(format!("weight has {} components, expected {}", w.len(), self.d));
        }
        if let Some(i) = (0..self.m).find(|&i| w[i] < S::zero()) {
            return Err(format!("component {} is negative", i + 1));
        }
        if w[..self.m].iter().all(|x| x.is_exact_zero()) {
            return Err("eligible part is zero".into());
        }
        Ok(())
    }

    pub fn is_eligible<S: Scalar>(&self, v: &[S]) -> bool {
        v[self.m..].iter().all(|x| x.is_exact_zero() || x.is_zero_tol())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RiskError {
    #[error("invalid weight at node {node}: {reason}")]
    InvalidWeight { node: i64, reason: String },
    #[error("claim must be F_{time}-measurable and eligible-valued (violated below node {node})")]
    NotMeasurable { time: usize, node: i64 },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("dual pair rejected: {0}")]
    InvalidPair(String),
    #[error("scalarization is not finite at node {node}")]
    InfiniteValue { node: i64 },
    #[error("no stepped set for node {node} and time {s}")]
    MissingStepped { node: i64, s: usize },
    #[error("invalid system: {0}")]
    System(String),
    #[error("undefined sum of infinities: {0}")]
    Undefined(String),
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Lp(#[from] crate::lp::LpError),
}

/// A family of acceptance sets `A_t(n)`, one per node, with stepped sets
/// `A_{t,s}(n)` keyed by `(node, s)`.
#[derive(Clone, Debug)]
pub struct AcceptanceSystem<S> {
    tree: ScenarioTree<S>,
    space: EligibleSpace,
    sets: Vec<LiftedSet<S>>,
    stepped: BTreeMap<(usize, usize), LiftedSet<S>>,
    coherent: bool,
    label: String,
}

impl<S: Scalar> AcceptanceSystem<S> {
    /// Assembles a system and runs the structural checks.
    pub fn new(
        tree: ScenarioTree<S>,
        sets: Vec<LiftedSet<S>>,
        stepped: BTreeMap<(usize, usize), LiftedSet<S>>,
        label: impl Into<String>,
    ) -> Result<Self, RiskError> {
        if sets.len() != tree.len() {
            return Err(RiskError::System(format!("{} sets for {} nodes", sets.len(), tree.len())));
        }
        for (n, a) in sets.iter().enumerate() {
            if a.root() != n || a.d() != tree.d() {
                return Err(RiskError::System(format!("set for node {} has the wrong ambient subtree", tree.id(n))));
            }
        }
        for (&(n, s), a) in &stepped {
            if s <= tree.time(n) || s > tree.horizon() {
                return Err(RiskError::System(format!("stepped set ({}, {s}) outside (t, T]", tree.id(n))));
            }
            if a.root() != n || a.d() != tree.d() {
                return Err(RiskError::System(format!("stepped set ({}, {s}) has the wrong ambient subtree", tree.id(n))));
            }
        }
        let coherent = sets.iter().all(|a| a.is_conic()) && stepped.values().all(|a| a.is_conic());
        let space = EligibleSpace::new(tree.d(), tree.m());
        Ok(AcceptanceSystem { tree, space, sets, stepped, coherent, label: label.into() })
    }

    pub fn tree(&self) -> &ScenarioTree<S> {
        &self.tree
    }

    pub fn space(&self) -> EligibleSpace {
        self.space
    }

    pub fn set(&self, n: usize) -> &LiftedSet<S> {
        &self.sets[n]
    }

    pub fn stepped(&self, n: usize, s: usize) -> Result<&LiftedSet<S>, RiskError> {
        self.stepped
            .get(&(n, s))
            .ok_or(RiskError::MissingStepped { node: self.tree.id(n), s })
    }

    pub fn stepped_sets(&self) -> &BTreeMap<(usize, usize), LiftedSet<S>> {
        &self.stepped
    }

    pub fn is_coherent(&self) -> bool {
        self.coherent
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Returns a copy with some stepped sets replaced.
    pub fn with_stepped(&self, replace: BTreeMap<(usize, usize), LiftedSet<S>>, label: &str) -> Result<Self, RiskError> {
        let mut stepped = self.stepped.clone();
        stepped.extend(replace);
        AcceptanceSystem::new(self.tree.clone(), self.sets.clone(), stepped, label)
    }

    pub fn local_claim(&self, x: &TerminalClaim<S>, n: usize) -> Vec<Vec<S>> {
        x.values[self.tree.leaf_range(n)].to_vec()
    }

    /// Probe-based checks of the acceptance-set axioms at every node:
    /// monotonicity, eligible intersection and a non-trivial zero set.
    pub fn validate(&self) -> Result<(), RiskError> {
        let d = self.tree.d();
        for n in 0..self.tree.len() {
            let a = &self.sets[n];
            let rec = a.recession_cone();
            for l in 0..a.n_leaves() {
                for i in 0..d {
                    let mut e = vec![vec![S::zero(); d]; a.n_leaves()];
                    e[l][i] = S::one();
                    if !rec.membership(&e)? {
                        return Err(RiskError::System(format!(
                            "A at node {} is not monotone in asset {} at leaf {}",
                            self.tree.id(n),
                            i + 1,
                            self.tree.id(self.tree.leaves()[self.tree.leaf_range(n).start + l])
                        )));
                    }
                }
            }
            if !self.eligible_intersection_nonempty(n)? {
                return Err(RiskError::System(format!("A at node {} contains no eligible constant", self.tree.id(n))));
            }
            if !self.zero_risk_bounded_somewhere(n)? {
                return Err(RiskError::System(format!(
                    "zero set at node {} is all of M (scalarization of 0 is -inf for all weights)",
                    self.tree.id(n)
                )));
            }
        }
        Ok(())
    }

    /// Checks stepped sets against `A_t ∩ M_s` on probes: generators when
    /// available and support maximizers along coordinate directions.
    pub fn verify_stepped(&self) -> Result<(), RiskError> {
        let d = self.tree.d();
        for (&(n, s), a) in &self.stepped {
            let mut probes: Vec<Vec<Vec<S>>> = a.generators().unwrap_or_default();
            for l in 0..a.n_leaves() {
                for i in 0..d {
                    for sign in [S::one(), -S::one()] {
                        let mut v = vec![vec![S::one(); d]; a.n_leaves()];
                        v[l][i] = v[l][i].clone() + sign;
                        if let Some(z) = a.support_value(&self.tree, &v)?.maximizer {
                            probes.push(z);
                        }
                    }
                }
            }
            let offset = self.tree.leaf_range(n).start;
            for z in probes {
                let claim = TerminalClaim { values: {
                    let mut full = vec![vec![S::zero(); d]; self.tree.num_leaves()];
                    for (l, zl) in z.iter().enumerate() {
                        full[offset + l] = zl.clone();
                    }
                    full
                } };
                let measurable = self
                    .tree
                    .descendants_at(n, s)
                    .iter()
                    .all(|&nu| {
                        let r = self.tree.leaf_range(nu);
                        claim.values[r.clone()].iter().all(|v| approx_vec_eq(v, &claim.values[r.start]))
                    });
                if !measurable || !z.iter().all(|v| self.space.is_eligible(v)) {
                    return Err(RiskError::System(format!(
                        "stepped set ({}, {s}) has a member that is not F_s-measurable and eligible",
                        self.tree.id(n)
                    )));
                }
                if !self.sets[n].membership(&z)? {
                    return Err(RiskError::System(format!(
                        "stepped set ({}, {s}) has a member outside A_t",
                        self.tree.id(n)
                    )));
                }
            }
        }
        Ok(())
    }

    fn check_weights(&self, t: usize, w: &AdaptedVector<S>, strict: bool) -> Result<Vec<Vec<S>>, RiskError> {
        if w.time != t {
            return Err(RiskError::Shape(format!("weight at time {} used at time {t}", w.time)));
        }
        w.check_shape(&self.tree).map_err(RiskError::Shape)?;
        let mut out = Vec::with_capacity(w.values.len());
        for (pos, &n) in self.tree.nodes_at(t).iter().enumerate() {
            let c = self.space.canonicalize(&w.values[pos]);
            let res = if strict {
                self.space.check_weight(&c)
            } else if c.iter().any(|x| *x < S::zero()) {
                Err("negative component".into())
            } else {
                Ok(())
            };
            res.map_err(|reason| RiskError::InvalidWeight { node: self.tree.id(n), reason })?;
            out.push(c);
        }
        Ok(out)
    }

    /// `ρ_t^w(X)` at every time-`t` node.
    pub fn scalarize(&self, t: usize, w: &AdaptedVector<S>, x: &TerminalClaim<S>) -> Result<ScalarRiskValue<S>, RiskError> {
        self.scalarize_with(t, w, x, true)
    }

    /// As [`Self::scalarize`] but accepting any `w ≥ 0`, including eligible parts equal to zero.
    pub fn scalarize_lax(&self, t: usize, w: &AdaptedVector<S>, x: &TerminalClaim<S>) -> Result<ScalarRiskValue<S>, RiskError> {
        self.scalarize_with(t, w, x, false)
    }

    fn scalarize_with(&self, t: usize, w: &AdaptedVector<S>, x: &TerminalClaim<S>, strict: bool) -> Result<ScalarRiskValue<S>, RiskError> {
        x.check_shape(&self.tree).map_err(RiskError::Shape)?;
        let ws = self.check_weights(t, w, strict)?;
        let nodes = self
            .tree
            .nodes_at(t)
            .iter()
            .zip(&ws)
            .map(|(&n, wn)| scalarize_node(&self.sets[n], n, wn, &self.local_claim(x, n), self.space.m))
            .collect::<Result<_, _>>()?;
        Ok(ScalarRiskValue { time: t, nodes })
    }

    /// `ρ_{t,s}^w(Z)` for an `𝓕_s`-measurable eligible claim `Z`.
    pub fn scalarize_stepped(
        &self,
        t: usize,
        s: usize,
        w: &AdaptedVector<S>,
        z: &TerminalClaim<S>,
    ) -> Result<ScalarRiskValue<S>, RiskError> {
        z.check_shape(&self.tree).map_err(RiskError::Shape)?;
        for &nu in self.tree.nodes_at(s) {
            let r = self.tree.leaf_range(nu);
            let first = &z.values[r.start];
            if !z.values[r].iter().all(|v| v == first) || !self.space.is_eligible(first) {
                return Err(RiskError::NotMeasurable { time: s, node: self.tree.id(nu) });
            }
        }
        let ws = self.check_weights(t, w, true)?;
        let nodes = self
            .tree
            .nodes_at(t)
            .iter()
            .zip(&ws)
            .map(|(&n, wn)| scalarize_node(self.stepped(n, s)?, n, wn, &self.local_claim(z, n), self.space.m))
            .collect::<Result<_, _>>()?;
        Ok(ScalarRiskValue { time: t, nodes })
    }

    /// Scalarization at one node against an arbitrary set on its subtree.
    pub fn scalarize_against(&self, set: &LiftedSet<S>, w: &[S], x: &TerminalClaim<S>) -> Result<NodeValue<S>, RiskError> {
        let n = set.root();
        scalarize_node(set, n, &self.space.canonicalize(w), &self.local_claim(x, n), self.space.m)
    }

    /// Leaf directions `w_t^T(Q, v)` (or `w_t^s(Q, v)` continued to leaves).
    pub fn transported_direction(&self, q: &MeasureVector<S>, v: &AdaptedVector<S>, s: usize) -> AdaptedVector<S> {
        let moved = weight_transport(&self.tree, q, v, s);
        moved.lift_to(&self.tree, self.tree.horizon())
    }

    /// `α_t(Q, v)` (horizon `None`) or `α_{t,s}(Q, v)`.
    pub fn penalty_alpha(
        &self,
        t: usize,
        horizon: Option<usize>,
        q: &MeasureVector<S>,
        v: &AdaptedVector<S>,
    ) -> Result<PenaltyValue<S>, RiskError> {
        q.validate(&self.tree).map_err(|e| RiskError::Shape(e.to_string()))?;
        if v.time != t {
            return Err(RiskError::Shape(format!("direction at time {} used at time {t}", v.time)));
        }
        v.check_shape(&self.tree).map_err(RiskError::Shape)?;
        let s = horizon.unwrap_or(self.tree.horizon());
        let dir = self.transported_direction(q, v, s);
        let values = self
            .tree
            .nodes_at(t)
            .iter()
            .map(|&n| {
                let set = match horizon {
                    None => &self.sets[n],
                    Some(s) if s == t => &self.sets[n],
                    Some(s) => self.stepped(n, s)?,
                };
                Ok(set.support_value(&self.tree, &dir.values[self.tree.leaf_range(n)])?.value)
            })
            .collect::<Result<_, RiskError>>()?;
        Ok(PenaltyValue { time: t, values })
    }

    /// Checks `(Q, m_⊥) ∈ 𝒲_t(w)`.
    pub fn check_pair(&self, t: usize, w: &AdaptedVector<S>, pair: &DualPair<S>) -> Result<AdaptedVector<S>, RiskError> {
        pair.q.validate(&self.tree).map_err(|e| RiskError::InvalidPair(format!("Q: {e}")))?;
        let mp = &pair.m_perp;
        if mp.time != t {
            return Err(RiskError::InvalidPair(format!("m_perp at time {} instead of {t}", mp.time)));
        }
        mp.check_shape(&self.tree).map_err(|e| RiskError::InvalidPair(format!("m_perp: {e}")))?;
        let m = self.space.m;
        for (pos, v) in mp.values.iter().enumerate() {
            if v[..m].iter().any(|x| !x.is_exact_zero()) {
                return Err(RiskError::InvalidPair(format!(
                    "m_perp has eligible components at node {}",
                    self.tree.id(self.tree.nodes_at(t)[pos])
                )));
            }
        }
        let total = self.add_perp(w, mp);
        let dir = self.transported_direction(&pair.q, &total, self.tree.horizon());
        for (k, v) in dir.values.iter().enumerate() {
            if let Some(i) = v.iter().position(|x| x.is_neg_tol()) {
                return Err(RiskError::InvalidPair(format!(
                    "w_t^T(Q, w + m_perp) has negative component {} at leaf {}",
                    i + 1,
                    self.tree.id(self.tree.leaves()[k])
                )));
            }
        }
        Ok(total)
    }

    fn add_perp(&self, w: &AdaptedVector<S>, mp: &AdaptedVector<S>) -> AdaptedVector<S> {
        AdaptedVector {
            time: w.time,
            values: w
                .values
                .iter()
                .zip(&mp.values)
                .map(|(a, b)| {
                    self.space
                        .canonicalize(a)
                        .into_iter()
                        .zip(b)
                        .map(|(x, y)| x + y.clone())
                        .collect()
                })
                .collect(),
        }
    }

    /// `−α_t(Q, w+m_⊥) + (w+m_⊥)ᵀ E^Q[−X | 𝓕_t]` per node.
    pub fn dual_value(
        &self,
        t: usize,
        x: &TerminalClaim<S>,
        w: &AdaptedVector<S>,
        pair: &DualPair<S>,
    ) -> Result<PenaltyValue<S>, RiskError> {
        self.check_weights(t, w, false)?;
        let total = self.check_pair(t, w, pair)?;
        let alpha = self.penalty_alpha(t, None, &pair.q, &total)?;
        let dir = self.transported_direction(&pair.q, &total, self.tree.horizon());
        let values = self
            .tree
            .nodes_at(t)
            .iter()
            .zip(alpha.values)
            .map(|(&n, a)| {
                let lin = linear_term(&self.tree, n, &dir.values, &x.values);
                Ext::Finite(lin).try_sub(&a).map_err(|_| RiskError::Undefined("dual value".into()))
            })
            .collect::<Result<_, _>>()?;
        Ok(PenaltyValue { time: t, values })
    }

    /// Extracts a maximizing `(Q, m_⊥)` from the multipliers of the
    /// scalarization LP.
    pub fn dual_maximizer(
        &self,
        t: usize,
        x: &TerminalClaim<S>,
        w: &AdaptedVector<S>,
    ) -> Result<(DualPair<S>, ScalarRiskValue<S>), RiskError> {
        let value = self.scalarize(t, w, x)?;
        let pair = self.pair_from_multipliers(t, &value)?;
        Ok((pair, value))
    }

    /// Builds `(Q, m_⊥)` from raw multipliers `π` of a time-`t` scalarization.
    pub fn pair_from_multipliers(&self, t: usize, value: &ScalarRiskValue<S>) -> Result<DualPair<S>, RiskError> {
        let d = self.tree.d();
        let m = self.space.m;
        let mut masses = vec![vec![S::zero(); self.tree.num_leaves()]; d];
        let mut perp = Vec::with_capacity(value.nodes.len());
        for nv in &value.nodes {
            let n = nv.node;
            let pi = nv
                .multipliers
                .as_ref()
                .ok_or(RiskError::InfiniteValue { node: self.tree.id(n) })?;
            let pi: Vec<S> = pi.iter().map(|p| if p.is_neg_tol() { p.clone() } else { S::max_of(p.clone(), S::zero()) }).collect();
            let (q_local, c) = measure_from_weights(&self.tree, n, &pi, d);
            let r = self.tree.leaf_range(n);
            for i in 0..d {
                for (l, qv) in q_local[i].iter().enumerate() {
                    masses[i][r.start + l] = qv.clone();
                }
            }
            perp.push((0..d).map(|i| if i < m { S::zero() } else { c[i].clone() }).collect());
        }
        Ok(DualPair { q: MeasureVector { masses }, m_perp: AdaptedVector { time: t, values: perp } })
    }

    /// Whether `min{w'ᵀu : u ∈ R_s(0)}` is bounded (then it is 0) at each node.
    pub fn zero_dual_check(&self, s: usize, w: &AdaptedVector<S>) -> Result<Vec<bool>, RiskError> {
        let zero = TerminalClaim::zeros(&self.tree);
        let v = self.scalarize_lax(s, w, &zero)?;
        Ok(v.nodes.iter().map(|nv| nv.value != Ext::NegInf).collect())
    }

    /// Whether some constant eligible `u` has `u·𝟙 ∈ A_t(n)`.
    pub fn eligible_intersection_nonempty(&self, n: usize) -> Result<bool, RiskError> {
        let mut w = vec![S::zero(); self.tree.d()];
        w[0] = S::one();
        let zero = TerminalClaim::zeros(&self.tree);
        Ok(self.scalarize_against(&self.sets[n], &w, &zero)?.value != Ext::PosInf)
    }

    /// Whether `ρ_t^w(0) > −∞` for some eligible weight at node `n`.
    pub fn zero_risk_bounded_somewhere(&self, n: usize) -> Result<bool, RiskError> {
        let zero = vec![vec![S::zero(); self.tree.d()]; self.sets[n].n_leaves()];
        Ok(separating_weight(&self.sets[n], self.space.m, &zero, &vec![S::zero(); self.tree.d()], true)?.is_some())
    }

    /// Tests `u ∈ R_t(X)` directly and through scalarizations.
    pub fn family_membership(
        &self,
        t: usize,
        x: &TerminalClaim<S>,
        u: &AdaptedVector<S>,
        extra_probes: &[Vec<S>],
    ) -> Result<Vec<FamilyVerdict<S>>, RiskError> {
        if u.time != t {
            return Err(RiskError::Shape(format!("u at time {} used at time {t}", u.time)));
        }
        u.check_shape(&self.tree).map_err(RiskError::Shape)?;
        let m = self.space.m;
        let d = self.tree.d();
        let mut probes: Vec<Vec<S>> = (0..m)
            .map(|i| {
                let mut e = vec![S::zero(); d];
                e[i] = S::one();
                e
            })
            .collect();
        probes.push((0..d).map(|i| if i < m { S::one() } else { S::zero() }).collect());
        probes.extend(extra_probes.iter().map(|p| self.space.canonicalize(p)));
        let mut out = Vec::new();
        for &n in self.tree.nodes_at(t) {
            let un = self.space.canonicalize(u.at(&self.tree, n));
            let shifted = x.shift(&self.tree, &AdaptedVector::constant(&self.tree, t, &un));
            let local_x = self.local_claim(x, n);
            let direct = self.sets[n].membership(&self.local_claim(&shifted, n))?;
            let mut scalar_ok = true;
            let mut violating = None;
            for p in &probes {
                if self.space.check_weight(p).is_err() {
                    continue;
                }
                let rho = scalarize_node(&self.sets[n], n, p, &local_x, m)?.value;
                let cost = crate::scalar::dot(p, &un);
                if !rho.le_tol(&Ext::Finite(cost)) {
                    scalar_ok = false;
                    violating = Some(p.clone());
                    break;
                }
            }
            if scalar_ok {
                if let Some((w, gap)) = separating_weight(&self.sets[n], m, &local_x, &un, false)? {
                    if !gap.le_tol(&Ext::zero()) {
                        scalar_ok = false;
                        violating = Some(w);
                    }
                }
            }
            out.push(FamilyVerdict { node: n, direct, scalar: scalar_ok, separating_weight: violating });
        }
        Ok(out)
    }
}

fn approx_vec_eq<S: Scalar>(a: &[S], b: &[S]) -> bool {
    a.iter().zip(b).all(|(x, y)| x.approx_eq(y))
}

/// `Σ_ω P(ω|n) v(ω)ᵀ(−X(ω))` over the leaves below `n`.
pub fn linear_term<S: Scalar>(tree: &ScenarioTree<S>, n: usize, dir: &[Vec<S>], x: &[Vec<S>]) -> S {
    let mut acc = S::zero();
    for k in tree.leaf_range(n) {
        let p = tree.cond_prob(tree.leaves()[k], n);
        acc = acc - p * crate::scalar::dot(&dir[k], &x[k]);
    }
    acc
}

/// Normalizes raw leaf multipliers `π` (coordinate `ℓ·d + i`) below `n` into
/// per-asset leaf masses `Q_i` and component totals `c_i = Σ_ω π_i(ω)`.
pub fn measure_from_weights<S: Scalar>(tree: &ScenarioTree<S>, n: usize, pi: &[S], d: usize) -> (Vec<Vec<S>>, Vec<S>) {
    let r = tree.leaf_range(n);
    let pn = tree.prob(n).clone();
    let mut q = vec![Vec::with_capacity(r.len()); d];
    let mut totals = vec![S::zero(); d];
    for i in 0..d {
        let c = (0..r.len()).fold(S::zero(), |a, l| a + pi[l * d + i].clone());
        let positive = if S::is_exact() { c > S::zero() } else { c.to_f64() > 1e-14 };
        for (l, k) in r.clone().enumerate() {
            let mass = if positive {
                pn.clone() * pi[l * d + i].clone() / c.clone()
            } else {
                tree.prob(tree.leaves()[k]).clone()
            };
            q[i].push(mass);
        }
        totals[i] = if positive { c } else { S::zero() };
    }
    (q, totals)
}

fn scalarize_node<S: Scalar>(set: &LiftedSet<S>, n: usize, w: &[S], x: &[Vec<S>], m: usize) -> Result<NodeValue<S>, RiskError> {
    let d = set.d();
    let mut lp = LinearProgram::new(Sense::Minimize);
    let (_, image) = set.append_to(&mut lp);
    let u: Vec<usize> = (0..m).map(|i| lp.add_free(w[i].clone())).collect();
    let mut rows = Vec::with_capacity(image.len());
    for (k, mut expr) in image.into_iter().enumerate() {
        let (l, i) = (k / d, k % d);
        if i < m {
            expr.push((u[i], -S::one()));
        }
        rows.push(lp.add_constraint(expr, Relation::Eq, x[l][i].clone()));
    }
    let out = solve_lp(&lp)?;
    Ok(match out.status {
        LpStatus::Infeasible => NodeValue { node: n, value: Ext::PosInf, minimizer: None, multipliers: None },
        LpStatus::Unbounded => NodeValue { node: n, value: Ext::NegInf, minimizer: None, multipliers: None },
        LpStatus::Optimal => {
            let mut minimizer = vec![S::zero(); d];
            for i in 0..m {
                minimizer[i] = out.primal[u[i]].clone();
            }
            let multipliers = rows.iter().map(|&r| -out.duals[r].clone()).collect();
            NodeValue { node: n, value: Ext::Finite(out.value.unwrap()), minimizer: Some(minimizer), multipliers: Some(multipliers) }
        }
    })
}

/// Adds the dual-feasible multipliers `π` for a scalarization on `set`
/// constrained by `Σ_ω π_i(ω) = w_i` (`i ≤ m`), `π ≥ 0`. Returns the raw
/// `π` variable indices (coordinate order) and the penalty expression.
pub fn add_dual_multipliers<S: Scalar>(
    lp: &mut LinearProgram<S>,
    set: &LiftedSet<S>,
    m: usize,
    w: &[LinExpr<S>],
) -> (Vec<usize>, LinExpr<S>) {
    let d = set.d();
    let pi: Vec<usize> = (0..set.dim()).map(|_| lp.add_nonneg(S::zero())).collect();
    for i in 0..m {
        let mut coeffs: Vec<(usize, S)> = (0..set.n_leaves()).map(|l| (pi[l * d + i], S::one())).collect();
        coeffs.extend(w[i].iter().map(|(v, c)| (*v, -c.clone())));
        lp.add_constraint(coeffs, Relation::Eq, S::zero());
    }
    let cexpr: Vec<LinExpr<S>> = pi.iter().map(|&p| vec![(p, S::one())]).collect();
    let penalty = set.add_dual_block(lp, &cexpr);
    (pi, penalty)
}

/// Maximizes `ρ^w(X) − wᵀu` over eligible weights with `Σ_{i≤m} w_i = 1`.
/// With `feasibility_only`, only reports whether a finite dual exists.
fn separating_weight<S: Scalar>(
    set: &LiftedSet<S>,
    m: usize,
    x: &[Vec<S>],
    u: &[S],
    feasibility_only: bool,
) -> Result<Option<(Vec<S>, Ext<S>)>, RiskError> {
    let d = set.d();
    let mut lp = LinearProgram::new(Sense::Maximize);
    let w: Vec<usize> = (0..m).map(|i| lp.add_nonneg(if feasibility_only { S::zero() } else { -u[i].clone() })).collect();
    lp.add_constraint(w.iter().map(|&v| (v, S::one())).collect(), Relation::Eq, S::one());
    let wexpr: Vec<LinExpr<S>> = w.iter().map(|&v| vec![(v, S::one())]).collect();
    let (pi, penalty) = add_dual_multipliers(&mut lp, set, m, &wexpr);
    if !feasibility_only {
        for (k, &p) in pi.iter().enumerate() {
            lp.objective[p] = lp.objective[p].clone() - x[k / d][k % d].clone();
        }
        for (v, h) in penalty {
            lp.objective[v] = lp.objective[v].clone() - h;
        }
    }
    let out = solve_lp(&lp)?;
    Ok(match out.status {
        LpStatus::Infeasible => None,
        LpStatus::Unbounded => {
            let mut e = vec![S::zero(); d];
            e[0] = S::one();
            Some((e, Ext::PosInf))
        }
        LpStatus::Optimal => {
            let mut ws = vec![S::zero(); d];
            for i in 0..m {
                ws[i] = out.primal[w[i]].clone();
            }
            Some((ws, Ext::Finite(out.value.unwrap())))
        }
    })
}

#[derive(Clone, Debug)]
pub struct NodeValue<S> {
    pub node: usize,
    pub value: Ext<S>,
    pub minimizer: Option<Vec<S>>,
    /// Raw multipliers `π` of the acceptance constraints, coordinate `ℓ·d + i`.
    pub multipliers: Option<Vec<S>>,
}

#[derive(Clone, Debug)]
pub struct ScalarRiskValue<S> {
    pub time: usize,
    pub nodes: Vec<NodeValue<S>>,
}

impl<S: Scalar> ScalarRiskValue<S> {
    pub fn values(&self) -> Vec<Ext<S>> {
        self.nodes.iter().map(|n| n.value.clone()).collect()
    }

    pub fn to_json(&self, tree: &ScenarioTree<S>) -> Value {
        json!({
            "time": self.time,
            "nodes": self.nodes.iter().map(|nv| json!({
                "id": tree.id(nv.node),
                "value": serde_json::to_value(&nv.value).unwrap(),
                "minimizer": nv.minimizer.as_ref().map(|u| u.iter().map(|x| serde_json::to_value(Num(x.clone())).unwrap()).collect::<Vec<_>>()),
            })).collect::<Vec<_>>(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PenaltyValue<S> {
    pub time: usize,
    pub values: Vec<Ext<S>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualPair<S> {
    pub q: MeasureVector<S>,
    pub m_perp: AdaptedVector<S>,
}

#[derive(Clone, Debug)]
pub struct FamilyVerdict<S> {
    pub node: usize,
    pub direct: bool,
    pub scalar: bool,
    pub separating_weight: Option<Vec<S>>,
}

impl<S> FamilyVerdict<S> {
    pub fn agree(&self) -> bool {
        self.direct == self.scalar
    }
}

/// A pool of dual-feasible multiplier vertices at one node for sampling
/// random valid dual pairs.
#[derive(Clone, Debug)]
pub struct DualPool<S> {
    pub node: usize,
    pub vertices: Vec<Vec<S>>,
}

impl<S: Scalar> AcceptanceSystem<S> {
    /// Collects dual-feasible multiplier vertices at each time-`t` node by
    /// maximizing random objectives. Components beyond `m` are capped by
    /// `cap` so that every objective is bounded.
    pub fn dual_pools<R: Rng>(&self, t: usize, w: &AdaptedVector<S>, count: usize, cap: S, rng: &mut R) -> Result<Vec<DualPool<S>>, RiskError> {
        let ws = self.check_weights(t, w, true)?;
        let m = self.space.m;
        let d = self.tree.d();
        let mut pools = Vec::new();
        for (&n, wn) in self.tree.nodes_at(t).iter().zip(&ws) {
            let set = &self.sets[n];
            let mut vertices = Vec::new();
            for _ in 0..count {
                let mut lp = LinearProgram::new(Sense::Maximize);
                let wexpr: Vec<LinExpr<S>> = (0..m)
                    .map(|i| {
                        let v = lp.add_var(S::zero(), Some(wn[i].clone()), Some(wn[i].clone()));
                        vec![(v, S::one())]
                    })
                    .collect();
                let (pi, _) = add_dual_multipliers(&mut lp, set, m, &wexpr);
                for (k, &p) in pi.iter().enumerate() {
                    lp.objective[p] = S::ratio(rng.gen_range(-1000..=1000), 1000);
                    if k % d >= m {
                        lp.upper[p] = Some(cap.clone());
                    }
                }
                let out = solve_lp(&lp)?;
                if out.status == LpStatus::Optimal {
                    vertices.push(pi.iter().map(|&p| out.primal[p].clone()).collect());
                }
            }
            pools.push(DualPool { node: n, vertices });
        }
        Ok(pools)
    }

    /// Draws a random convex combination of pool vertices at every node and
    /// converts it into a dual pair.
    pub fn sample_pair<R: Rng>(&self, t: usize, pools: &[DualPool<S>], rng: &mut R) -> Option<DualPair<S>> {
        let nodes = pools
            .iter()
            .map(|pool| {
                if pool.vertices.is_empty() {
                    return None;
                }
                let raw: Vec<i64> = pool.vertices.iter().map(|_| rng.gen_range(0..=20)).collect();
                let total: i64 = raw.iter().sum::<i64>().max(1);
                let mut pi = vec![S::zero(); pool.vertices[0].len()];
                if raw.iter().all(|&r| r == 0) {
                    pi = pool.vertices[0].clone();
                } else {
                    for (v, &r) in pool.vertices.iter().zip(&raw) {
                        let c = S::ratio(r, total);
                        for (a, b) in pi.iter_mut().zip(v) {
                            *a = a.clone() + c.clone() * b.clone();
                        }
                    }
                }
                Some(NodeValue { node: pool.node, value: Ext::Finite(S::zero()), minimizer: None, multipliers: Some(pi) })
            })
            .collect::<Option<Vec<_>>>()?;
        self.pair_from_multipliers(t, &ScalarRiskValue { time: t, nodes }).ok()
    }
}
