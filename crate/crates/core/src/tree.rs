//! Finite scenario trees, adapted data and vector probability measures.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::ops::Range;

use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct RawNode<S> {
    pub id: i64,
    pub time: usize,
    pub parent: Option<i64>,
    pub prob: S,
}

#[derive(Clone, Debug)]
pub struct RawTree<S> {
    pub d: usize,
    pub m: usize,
    pub horizon: usize,
    pub nodes: Vec<RawNode<S>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TreeError {
    BadDimension { d: usize, m: usize },
    DuplicateId(i64),
    MissingRoot,
    MultipleRoots(Vec<i64>),
    RootNotAtTimeZero { id: i64, time: usize },
    RootProbability { value: String },
    UnknownParent { id: i64, parent: i64 },
    TimeInconsistent { id: i64, time: usize, parent_time: usize },
    BeyondHorizon { id: i64, time: usize, horizon: usize },
    EarlyLeaf { id: i64, time: usize },
    ChildrenSum { id: i64, sum: String, prob: String },
    NonPositiveLeaf { id: i64 },
    NegativeProbability { id: i64 },
}

impl fmt::Display for TreeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TreeError::BadDimension { d, m } => write!(f, "need d >= 1 and 1 <= m <= d, got d={d}, m={m}"),
            TreeError::DuplicateId(id) => write!(f, "duplicate node id {id}"),
            TreeError::MissingRoot => write!(f, "missing root"),
            TreeError::MultipleRoots(ids) => write!(f, "multiple roots {ids:?}"),
            TreeError::RootNotAtTimeZero { id, time } => write!(f, "root {id} at time {time} instead of 0"),
            TreeError::RootProbability { value } => write!(f, "root probability {value} ≠ 1"),
            TreeError::UnknownParent { id, parent } => write!(f, "node {id}: unknown parent {parent}"),
            TreeError::TimeInconsistent { id, time, parent_time } => {
                write!(f, "node {id}: time {time} but parent at time {parent_time}")
            }
            TreeError::BeyondHorizon { id, time, horizon } => {
                write!(f, "node {id}: time {time} beyond horizon {horizon}")
            }
            TreeError::EarlyLeaf { id, time } => write!(f, "node {id}: leaf at time {time} before horizon"),
            TreeError::ChildrenSum { id, sum, prob } => write!(f, "node {id}: children sum {sum} ≠ {prob}"),
            TreeError::NonPositiveLeaf { id } => write!(f, "leaf {id} has zero probability"),
            TreeError::NegativeProbability { id } => write!(f, "node {id} has negative probability"),
        }
    }
}

#[derive(Clone, Debug, thiserror::Error)]
#[error("invalid tree: {}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
pub struct TreeErrors(pub Vec<TreeError>);

#[derive(Clone, Debug)]
pub struct Node<S> {
    pub id: i64,
    pub time: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub prob: S,
    /// Position within `nodes_at(time)`.
    pub layer_pos: usize,
    /// `desc[k]` is the range of positions in layer `time + k` below this node.
    desc: Vec<Range<usize>>,
}

/// A validated tree. Node indices are internal and dense; layers are stored
/// in depth-first order so every subtree occupies a contiguous block of each
/// later layer.
#[derive(Clone, Debug)]
pub struct ScenarioTree<S> {
    d: usize,
    m: usize,
    horizon: usize,
    nodes: Vec<Node<S>>,
    layers: Vec<Vec<usize>>,
    by_id: HashMap<i64, usize>,
}

fn prob_tolerance<S: Scalar>() -> S {
    if S::is_exact() {
        S::zero()
    } else {
        S::from_f64(1e-12).unwrap()
    }
}

impl<S: Scalar> ScenarioTree<S> {
    pub fn from_raw(raw: RawTree<S>) -> Result<Self, TreeErrors> {
        let mut errors = Vec::new();
        if raw.d == 0 || raw.m == 0 || raw.m > raw.d {
            errors.push(TreeError::BadDimension { d: raw.d, m: raw.m });
        }
        let mut by_id = HashMap::new();
        for (i, n) in raw.nodes.iter().enumerate() {
            if by_id.insert(n.id, i).is_some() {
                errors.push(TreeError::DuplicateId(n.id));
            }
        }
        let roots: Vec<i64> = raw.nodes.iter().filter(|n| n.parent.is_none()).map(|n| n.id).collect();
        match roots.len() {
            0 => errors.push(TreeError::MissingRoot),
            1 => {}
            _ => errors.push(TreeError::MultipleRoots(roots.clone())),
        }
        let tol = prob_tolerance::<S>();
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); raw.nodes.len()];
        for (i, n) in raw.nodes.iter().enumerate() {
            if n.prob < S::zero() {
                errors.push(TreeError::NegativeProbability { id: n.id });
            }
            if n.time > raw.horizon {
                errors.push(TreeError::BeyondHorizon { id: n.id, time: n.time, horizon: raw.horizon });
            }
            match n.parent {
                None => {
                    if n.time != 0 {
                        errors.push(TreeError::RootNotAtTimeZero { id: n.id, time: n.time });
                    }
                    if (n.prob.clone() - S::one()).abs() > tol {
                        errors.push(TreeError::RootProbability { value: n.prob.to_string() });
                    }
                }
                Some(p) => match by_id.get(&p) {
                    None => errors.push(TreeError::UnknownParent { id: n.id, parent: p }),
                    Some(&pi) => {
                        let pt = raw.nodes[pi].time;
                        if n.time != pt + 1 {
                            errors.push(TreeError::TimeInconsistent { id: n.id, time: n.time, parent_time: pt });
                        }
                        children[pi].push(i);
                    }
                },
            }
        }
        for (i, n) in raw.nodes.iter().enumerate() {
            if children[i].is_empty() {
                if n.time < raw.horizon {
                    errors.push(TreeError::EarlyLeaf { id: n.id, time: n.time });
                }
                if n.prob <= S::zero() {
                    errors.push(TreeError::NonPositiveLeaf { id: n.id });
                }
            } else {
                let sum = children[i].iter().fold(S::zero(), |acc, &c| acc + raw.nodes[c].prob.clone());
                if (sum.clone() - n.prob.clone()).abs() > tol {
                    errors.push(TreeError::ChildrenSum {
                        id: n.id,
                        sum: format_prob(&sum),
                        prob: format_prob(&n.prob),
                    });
                }
            }
        }
        if !errors.is_empty() {
            return Err(TreeErrors(errors));
        }
        let root = by_id[&roots[0]];
        for list in children.iter_mut() {
            list.sort_by_key(|&c| raw.nodes[c].id);
        }

        // Depth-first relabelling.
        let mut order = Vec::with_capacity(raw.nodes.len());
        let mut stack = vec![root];
        while let Some(i) = stack.pop() {
            order.push(i);
            for &c in children[i].iter().rev() {
                stack.push(c);
            }
        }
        let mut new_index = vec![usize::MAX; raw.nodes.len()];
        for (k, &i) in order.iter().enumerate() {
            new_index[i] = k;
        }
        let mut layers = vec![Vec::new(); raw.horizon + 1];
        let mut nodes: Vec<Node<S>> = order
            .iter()
            .map(|&i| {
                let n = &raw.nodes[i];
                let layer_pos = layers[n.time].len();
                layers[n.time].push(new_index[i]);
                Node {
                    id: n.id,
                    time: n.time,
                    parent: n.parent.map(|p| new_index[by_id[&p]]),
                    children: children[i].iter().map(|&c| new_index[c]).collect(),
                    prob: n.prob.clone(),
                    layer_pos,
                    desc: Vec::new(),
                }
            })
            .collect();
        for k in (0..nodes.len()).rev() {
            let mut desc = vec![nodes[k].layer_pos..nodes[k].layer_pos + 1];
            if !nodes[k].children.is_empty() {
                let first = nodes[k].children[0];
                let last = *nodes[k].children.last().unwrap();
                for depth in 0..nodes[first].desc.len() {
                    desc.push(nodes[first].desc[depth].start..nodes[last].desc[depth].end);
                }
            }
            nodes[k].desc = desc;
        }
        let by_id = nodes.iter().enumerate().map(|(k, n)| (n.id, k)).collect();
        Ok(ScenarioTree { d: raw.d, m: raw.m, horizon: raw.horizon, nodes, layers, by_id })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, n: usize) -> &Node<S> {
        &self.nodes[n]
    }

    pub fn nodes(&self) -> &[Node<S>] {
        &self.nodes
    }

    pub fn index_of(&self, id: i64) -> Option<usize> {
        self.by_id.get(&id).copied()
    }

    pub fn id(&self, n: usize) -> i64 {
        self.nodes[n].id
    }

    pub fn time(&self, n: usize) -> usize {
        self.nodes[n].time
    }

    pub fn prob(&self, n: usize) -> &S {
        &self.nodes[n].prob
    }

    pub fn nodes_at(&self, t: usize) -> &[usize] {
        &self.layers[t]
    }

    pub fn leaves(&self) -> &[usize] {
        &self.layers[self.horizon]
    }

    pub fn num_leaves(&self) -> usize {
        self.layers[self.horizon].len()
    }

    /// Layer positions at time `s` below node `n`.
    pub fn desc_range(&self, n: usize, s: usize) -> Range<usize> {
        let node = &self.nodes[n];
        assert!(s >= node.time && s <= self.horizon, "time {s} outside [{}, {}]", node.time, self.horizon);
        node.desc[s - node.time].clone()
    }

    /// Nodes at time `s` below `n`.
    pub fn descendants_at(&self, n: usize, s: usize) -> &[usize] {
        &self.layers[s][self.desc_range(n, s)]
    }

    /// Leaf positions below `n`.
    pub fn leaf_range(&self, n: usize) -> Range<usize> {
        self.desc_range(n, self.horizon)
    }

    pub fn ancestor_at(&self, mut n: usize, t: usize) -> usize {
        assert!(t <= self.nodes[n].time);
        while self.nodes[n].time > t {
            n = self.nodes[n].parent.unwrap();
        }
        n
    }

    /// `P(ν | n)` for a descendant `ν` of `n`.
    pub fn cond_prob(&self, nu: usize, n: usize) -> S {
        self.nodes[nu].prob.clone() / self.nodes[n].prob.clone()
    }

    pub fn is_descendant(&self, nu: usize, n: usize) -> bool {
        self.nodes[nu].time >= self.nodes[n].time && self.ancestor_at(nu, self.nodes[n].time) == n
    }

    pub fn to_raw(&self) -> RawTree<S> {
        RawTree {
            d: self.d,
            m: self.m,
            horizon: self.horizon,
            nodes: self
                .nodes
                .iter()
                .map(|n| RawNode {
                    id: n.id,
                    time: n.time,
                    parent: n.parent.map(|p| self.nodes[p].id),
                    prob: n.prob.clone(),
                })
                .collect(),
        }
    }

    /// Converts probabilities to another backend and revalidates.
    pub fn convert<T: Scalar>(&self, f: impl Fn(&S) -> T) -> Result<ScenarioTree<T>, TreeErrors> {
        let raw = self.to_raw();
        ScenarioTree::from_raw(RawTree {
            d: raw.d,
            m: raw.m,
            horizon: raw.horizon,
            nodes: raw
                .nodes
                .into_iter()
                .map(|n| RawNode { id: n.id, time: n.time, parent: n.parent, prob: f(&n.prob) })
                .collect(),
        })
    }
}

fn format_prob<S: Scalar>(v: &S) -> String {
    if S::is_exact() {
        v.to_string()
    } else {
        let x = v.to_f64();
        let rounded = (x * 1e12).round() / 1e12;
        format!("{rounded}")
    }
}

/// One `R^d` value per node of layer `time`, indexed by layer position.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptedVector<S> {
    pub time: usize,
    pub values: Vec<Vec<S>>,
}

impl<S: Scalar> AdaptedVector<S> {
    pub fn constant(tree: &ScenarioTree<S>, time: usize, v: &[S]) -> Self {
        AdaptedVector { time, values: vec![v.to_vec(); tree.nodes_at(time).len()] }
    }

    pub fn zeros(tree: &ScenarioTree<S>, time: usize) -> Self {
        AdaptedVector::constant(tree, time, &vec![S::zero(); tree.d()])
    }

    pub fn at(&self, tree: &ScenarioTree<S>, n: usize) -> &[S] {
        debug_assert_eq!(tree.time(n), self.time);
        &self.values[tree.node(n).layer_pos]
    }

    pub fn check_shape(&self, tree: &ScenarioTree<S>) -> Result<(), String> {
        if self.time > tree.horizon() {
            return Err(format!("time {} beyond horizon {}", self.time, tree.horizon()));
        }
        if self.values.len() != tree.nodes_at(self.time).len() {
            return Err(format!(
                "{} values for {} nodes at time {}",
                self.values.len(),
                tree.nodes_at(self.time).len(),
                self.time
            ));
        }
        if let Some(k) = self.values.iter().position(|v| v.len() != tree.d()) {
            return Err(format!("value {k} has dimension {} instead of {}", self.values[k].len(), tree.d()));
        }
        Ok(())
    }

    /// True when components `m+1..d` vanish at every node.
    pub fn is_eligible(&self, m: usize) -> bool {
        self.values.iter().all(|v| v[m..].iter().all(|x| x.is_exact_zero() || x.is_zero_tol()))
    }

    /// Extends to leaves by constant continuation.
    pub fn lift_to(&self, tree: &ScenarioTree<S>, s: usize) -> AdaptedVector<S> {
        let values = tree
            .nodes_at(s)
            .iter()
            .map(|&nu| self.at(tree, tree.ancestor_at(nu, self.time)).to_vec())
            .collect();
        AdaptedVector { time: s, values }
    }
}

/// A terminal payoff: one `R^d` value per leaf, indexed by leaf position.
#[derive(Clone, Debug, PartialEq)]
pub struct TerminalClaim<S> {
    pub values: Vec<Vec<S>>,
}

impl<S: Scalar> TerminalClaim<S> {
    pub fn zeros(tree: &ScenarioTree<S>) -> Self {
        TerminalClaim { values: vec![vec![S::zero(); tree.d()]; tree.num_leaves()] }
    }

    pub fn new(tree: &ScenarioTree<S>, values: Vec<Vec<S>>) -> Result<Self, String> {
        let c = TerminalClaim { values };
        c.check_shape(tree)?;
        Ok(c)
    }

    pub fn check_shape(&self, tree: &ScenarioTree<S>) -> Result<(), String> {
        if self.values.len() != tree.num_leaves() {
            return Err(format!("{} claim values for {} leaves", self.values.len(), tree.num_leaves()));
        }
        for (k, v) in self.values.iter().enumerate() {
            if v.len() != tree.d() {
                return Err(format!("leaf {} value has dimension {} instead of {}", tree.id(tree.leaves()[k]), v.len(), tree.d()));
            }
            if !S::is_exact() && v.iter().any(|x| !x.to_f64().is_finite()) {
                return Err(format!("leaf {} value is not finite", tree.id(tree.leaves()[k])));
            }
        }
        Ok(())
    }

    pub fn as_adapted(&self, tree: &ScenarioTree<S>) -> AdaptedVector<S> {
        AdaptedVector { time: tree.horizon(), values: self.values.clone() }
    }

    pub fn from_adapted(tree: &ScenarioTree<S>, a: &AdaptedVector<S>) -> Self {
        TerminalClaim { values: a.lift_to(tree, tree.horizon()).values }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a - b)
    }

    pub fn scale(&self, c: &S) -> Self {
        TerminalClaim {
            values: self.values.iter().map(|v| v.iter().map(|x| c.clone() * x.clone()).collect()).collect(),
        }
    }

    fn zip(&self, other: &Self, f: impl Fn(S, S) -> S) -> Self {
        TerminalClaim {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| f(x.clone(), y.clone())).collect())
                .collect(),
        }
    }

    /// Adds `u(n)·𝟙` below each node of an adapted vector's layer.
    pub fn shift(&self, tree: &ScenarioTree<S>, u: &AdaptedVector<S>) -> Self {
        self.add(&TerminalClaim::from_adapted(tree, u))
    }

    /// Whether the claim is constant on every time-`s` subtree.
    pub fn is_measurable(&self, tree: &ScenarioTree<S>, s: usize) -> bool {
        tree.nodes_at(s).iter().all(|&nu| {
            let r = tree.leaf_range(nu);
            self.values[r.clone()].iter().all(|v| v == &self.values[r.start])
        })
    }
}

/// One measure per asset, stored by leaf masses.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasureVector<S> {
    /// `masses[i][k]` is the mass of asset `i` on leaf position `k`.
    pub masses: Vec<Vec<S>>,
}

#[derive(Clone, Debug, thiserror::Error)]
pub enum MeasureError {
    #[error("measure has {got} components, expected {expected}")]
    Components { got: usize, expected: usize },
    #[error("component {asset} has {got} leaf masses, expected {expected}")]
    Leaves { asset: usize, got: usize, expected: usize },
    #[error("component {asset} has a negative mass")]
    Negative { asset: usize },
    #[error("component {asset} sums to {sum}")]
    Sum { asset: usize, sum: String },
}

impl<S: Scalar> MeasureVector<S> {
    /// The reference measure `P` in every component.
    pub fn reference(tree: &ScenarioTree<S>) -> Self {
        let p: Vec<S> = tree.leaves().iter().map(|&l| tree.prob(l).clone()).collect();
        MeasureVector { masses: vec![p; tree.d()] }
    }

    pub fn new(tree: &ScenarioTree<S>, masses: Vec<Vec<S>>) -> Result<Self, MeasureError> {
        let q = MeasureVector { masses };
        q.validate(tree)?;
        Ok(q)
    }

    pub fn validate(&self, tree: &ScenarioTree<S>) -> Result<(), MeasureError> {
        if self.masses.len() != tree.d() {
            return Err(MeasureError::Components { got: self.masses.len(), expected: tree.d() });
        }
        let tol = if S::is_exact() { S::zero() } else { S::from_f64(1e-10).unwrap() };
        for (i, q) in self.masses.iter().enumerate() {
            if q.len() != tree.num_leaves() {
                return Err(MeasureError::Leaves { asset: i + 1, got: q.len(), expected: tree.num_leaves() });
            }
            if q.iter().any(|x| *x < S::zero()) {
                return Err(MeasureError::Negative { asset: i + 1 });
            }
            let sum = q.iter().fold(S::zero(), |a, x| a + x.clone());
            if (sum.clone() - S::one()).abs() > tol {
                return Err(MeasureError::Sum { asset: i + 1, sum: sum.to_string() });
            }
        }
        Ok(())
    }

    pub fn node_mass(&self, tree: &ScenarioTree<S>, asset: usize, n: usize) -> S {
        self.masses[asset][tree.leaf_range(n)].iter().fold(S::zero(), |a, x| a + x.clone())
    }
}

/// `ξ̄_{t,s}(Q_i)` per time-`s` node (by layer position) and asset.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityRatio<S> {
    pub t: usize,
    pub s: usize,
    pub values: Vec<Vec<S>>,
}

pub fn density_ratio<S: Scalar>(tree: &ScenarioTree<S>, q: &MeasureVector<S>, t: usize, s: usize) -> DensityRatio<S> {
    assert!(t <= s && s <= tree.horizon());
    let d = tree.d();
    let mut values = vec![vec![S::one(); d]; tree.nodes_at(s).len()];
    for &n in tree.nodes_at(t) {
        for i in 0..d {
            let qn = q.node_mass(tree, i, n);
            if qn.is_exact_zero() || (!S::is_exact() && qn.to_f64() <= 0.0) {
                continue;
            }
            let pn = tree.prob(n).clone();
            for &nu in tree.descendants_at(n, s) {
                let qnu = q.node_mass(tree, i, nu);
                let v = (qnu * pn.clone()) / (tree.prob(nu).clone() * qn.clone());
                values[tree.node(nu).layer_pos][i] = v;
            }
        }
    }
    DensityRatio { t, s, values }
}

/// Conditional expectation of time-`s` data `y` given `𝓕_t` under `Q`.
pub fn conditional_expectation_of<S: Scalar>(
    tree: &ScenarioTree<S>,
    q: &MeasureVector<S>,
    y: &AdaptedVector<S>,
    t: usize,
) -> AdaptedVector<S> {
    let s = y.time;
    let xi = density_ratio(tree, q, t, s);
    let d = tree.d();
    let values = tree
        .nodes_at(t)
        .iter()
        .map(|&n| {
            let mut acc = vec![S::zero(); d];
            for &nu in tree.descendants_at(n, s) {
                let p = tree.cond_prob(nu, n);
                let pos = tree.node(nu).layer_pos;
                for i in 0..d {
                    acc[i] = acc[i].clone() + p.clone() * xi.values[pos][i].clone() * y.values[pos][i].clone();
                }
            }
            acc
        })
        .collect();
    AdaptedVector { time: t, values }
}

pub fn conditional_expectation<S: Scalar>(
    tree: &ScenarioTree<S>,
    q: &MeasureVector<S>,
    y: &TerminalClaim<S>,
    t: usize,
) -> AdaptedVector<S> {
    conditional_expectation_of(tree, q, &y.as_adapted(tree), t)
}

/// `w_t^s(Q, w) = diag(w) ξ_{t,s}(Q)` at each time-`s` node.
pub fn weight_transport<S: Scalar>(
    tree: &ScenarioTree<S>,
    q: &MeasureVector<S>,
    w: &AdaptedVector<S>,
    s: usize,
) -> AdaptedVector<S> {
    let t = w.time;
    let xi = density_ratio(tree, q, t, s);
    let values = tree
        .nodes_at(s)
        .iter()
        .map(|&nu| {
            let n = tree.ancestor_at(nu, t);
            let wn = w.at(tree, n);
            let pos = tree.node(nu).layer_pos;
            (0..tree.d()).map(|i| wn[i].clone() * xi.values[pos][i].clone()).collect()
        })
        .collect();
    AdaptedVector { time: s, values }
}

/// Plain conditional expectation under `P`.
pub fn expectation_p<S: Scalar>(tree: &ScenarioTree<S>, y: &AdaptedVector<S>, t: usize) -> AdaptedVector<S> {
    let s = y.time;
    let values = tree
        .nodes_at(t)
        .iter()
        .map(|&n| {
            let mut acc = vec![S::zero(); tree.d()];
            for &nu in tree.descendants_at(n, s) {
                let p = tree.cond_prob(nu, n);
                for (a, v) in acc.iter_mut().zip(&y.values[tree.node(nu).layer_pos]) {
                    *a = a.clone() + p.clone() * v.clone();
                }
            }
            acc
        })
        .collect();
    AdaptedVector { time: t, values }
}

/// A convenience builder for recombining-free trees with a fixed branching
/// pattern: `branch_probs[t]` lists conditional probabilities of children at
/// each node of time `t`.
pub fn uniform_branching<S: Scalar>(d: usize, m: usize, branch_probs: &[Vec<S>]) -> ScenarioTree<S> {
    let mut nodes = vec![RawNode { id: 0, time: 0, parent: None, prob: S::one() }];
    let mut frontier = vec![(0i64, S::one())];
    let mut next_id = 1i64;
    for (t, probs) in branch_probs.iter().enumerate() {
        let mut next = Vec::new();
        for (pid, pp) in &frontier {
            for cp in probs {
                let prob = pp.clone() * cp.clone();
                nodes.push(RawNode { id: next_id, time: t + 1, parent: Some(*pid), prob: prob.clone() });
                next.push((next_id, prob));
                next_id += 1;
            }
        }
        frontier = next;
    }
    ScenarioTree::from_raw(RawTree { d, m, horizon: branch_probs.len(), nodes }).expect("valid branching tree")
}

/// Maps node ids to their layer group for reporting.
pub fn ids_by_time<S: Scalar>(tree: &ScenarioTree<S>) -> BTreeMap<usize, Vec<i64>> {
    (0..=tree.horizon())
        .map(|t| (t, tree.nodes_at(t).iter().map(|&n| tree.id(n)).collect()))
        .collect()
}
