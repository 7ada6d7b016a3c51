//! Polyhedral sets over the leaf space of a subtree, carried in lifted form
//! `S = { F x : x ∈ X }` with `X = { x : G x rel h, x_j ≥ 0 or free }`.

use crate::lp::{solve_lp, LinearProgram, LpError, LpStatus, Relation, Sense};
use crate::scalar::{Ext, Scalar};
use crate::tree::ScenarioTree;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarKind {
    NonNeg,
    Free,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinRow<S> {
    pub coeffs: Vec<(usize, S)>,
    pub relation: Relation,
    pub rhs: S,
}

#[derive(Clone, Debug, thiserror::Error)]
pub enum PolyError {
    #[error("empty description: no generators, no constraints and no orthant")]
    EmptyDescription,
    #[error("ambient mismatch: {0}")]
    AmbientMismatch(String),
    #[error("point has wrong shape: {0}")]
    Shape(String),
    #[error(transparent)]
    Lp(#[from] LpError),
}

/// A polyhedral set of claims on the subtree rooted at `root`. Image
/// coordinate `k = ℓ·d + i` is asset `i` at the `ℓ`-th leaf below `root`.
#[derive(Clone, Debug)]
pub struct LiftedSet<S> {
    root: usize,
    leaf_offset: usize,
    n_leaves: usize,
    d: usize,
    vars: Vec<VarKind>,
    image: Vec<Vec<(usize, S)>>,
    rows: Vec<LinRow<S>>,
    /// Whether nonnegative orthant directions were added explicitly.
    orthant: bool,
}

/// Linear expression over the variables of an enclosing LP.
pub type LinExpr<S> = Vec<(usize, S)>;

#[derive(Clone, Debug)]
pub struct SupportOutcome<S> {
    pub value: Ext<S>,
    /// A maximizing member, one `R^d` value per local leaf.
    pub maximizer: Option<Vec<Vec<S>>>,
}

impl<S: Scalar> LiftedSet<S> {
    /// The singleton `{0}` on the subtree of `root`.
    pub fn zero(tree: &ScenarioTree<S>, root: usize) -> Self {
        let r = tree.leaf_range(root);
        LiftedSet {
            root,
            leaf_offset: r.start,
            n_leaves: r.len(),
            d: tree.d(),
            vars: Vec::new(),
            image: vec![Vec::new(); r.len() * tree.d()],
            rows: Vec::new(),
            orthant: false,
        }
    }

    /// Cone spanned by `generators` (local-leaf claims), optionally plus the
    /// nonnegative orthant.
    pub fn cone(tree: &ScenarioTree<S>, root: usize, generators: &[Vec<Vec<S>>], orthant: bool) -> Result<Self, PolyError> {
        let mut set = LiftedSet::zero(tree, root);
        for g in generators {
            set.add_generator(g)?;
        }
        if orthant {
            set.add_orthant();
        }
        set.finish()
    }

    /// Convex hull of `points` plus cone of `generators` (and the orthant if requested).
    pub fn hull(
        tree: &ScenarioTree<S>,
        root: usize,
        points: &[Vec<Vec<S>>],
        generators: &[Vec<Vec<S>>],
        orthant: bool,
    ) -> Result<Self, PolyError> {
        let mut set = LiftedSet::zero(tree, root);
        if !points.is_empty() {
            set.add_hull_block(points)?;
        }
        for g in generators {
            set.add_generator(g)?;
        }
        if orthant {
            set.add_orthant();
        }
        set.finish()
    }

    /// The nonnegative orthant on the subtree.
    pub fn orthant(tree: &ScenarioTree<S>, root: usize) -> Self {
        let mut set = LiftedSet::zero(tree, root);
        set.add_orthant();
        set
    }

    /// Rejects descriptions that specify nothing at all.
    pub fn finish(self) -> Result<Self, PolyError> {
        if self.vars.is_empty() && self.rows.is_empty() && !self.orthant {
            return Err(PolyError::EmptyDescription);
        }
        Ok(self)
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    pub fn dim(&self) -> usize {
        self.n_leaves * self.d
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn has_orthant(&self) -> bool {
        self.orthant
    }

    /// Homogeneous constraints: the set is a cone.
    pub fn is_conic(&self) -> bool {
        self.rows.iter().all(|r| r.rhs.is_exact_zero())
    }

    pub fn add_var(&mut self, kind: VarKind) -> usize {
        self.vars.push(kind);
        self.vars.len() - 1
    }

    /// Adds `coeff·x_var` to image coordinate `(leaf, asset)`.
    pub fn add_image(&mut self, leaf: usize, asset: usize, var: usize, coeff: S) {
        self.image[leaf * self.d + asset].push((var, coeff));
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, S)>, relation: Relation, rhs: S) {
        self.rows.push(LinRow { coeffs, relation, rhs });
    }

    fn check_point(&self, z: &[Vec<S>]) -> Result<(), PolyError> {
        if z.len() != self.n_leaves || z.iter().any(|v| v.len() != self.d) {
            return Err(PolyError::Shape(format!("expected {} leaves of dimension {}", self.n_leaves, self.d)));
        }
        Ok(())
    }

    pub fn add_generator(&mut self, g: &[Vec<S>]) -> Result<usize, PolyError> {
        self.check_point(g)?;
        let v = self.add_var(VarKind::NonNeg);
        for (l, gl) in g.iter().enumerate() {
            for (i, x) in gl.iter().enumerate() {
                if !x.is_exact_zero() {
                    self.add_image(l, i, v, x.clone());
                }
            }
        }
        Ok(v)
    }

    /// Adds `Σ μ_k p_k` with `μ ≥ 0`, `Σ μ = 1`.
    pub fn add_hull_block(&mut self, points: &[Vec<Vec<S>>]) -> Result<(), PolyError> {
        let mut mus = Vec::with_capacity(points.len());
        for p in points {
            mus.push(self.add_generator(p)?);
        }
        self.add_row(mus.into_iter().map(|v| (v, S::one())).collect(), Relation::Eq, S::one());
        Ok(())
    }

    pub fn add_orthant(&mut self) {
        for l in 0..self.n_leaves {
            for i in 0..self.d {
                let v = self.add_var(VarKind::NonNeg);
                self.add_image(l, i, v, S::one());
            }
        }
        self.orthant = true;
    }

    /// When the set is a cone given purely by generators, returns them.
    pub fn generators(&self) -> Option<Vec<Vec<Vec<S>>>> {
        if !self.rows.is_empty() {
            return None;
        }
        let mut cols: Vec<Vec<Vec<S>>> = vec![vec![vec![S::zero(); self.d]; self.n_leaves]; self.vars.len()];
        for (k, entries) in self.image.iter().enumerate() {
            let (l, i) = (k / self.d, k % self.d);
            for (v, c) in entries {
                cols[*v][l][i] = cols[*v][l][i].clone() + c.clone();
            }
        }
        let mut out = Vec::new();
        for (v, col) in cols.into_iter().enumerate() {
            if self.vars[v] == VarKind::Free {
                out.push(col.iter().map(|x| x.iter().map(|y| -y.clone()).collect()).collect());
            }
            out.push(col);
        }
        Some(out)
    }

    /// `A ⊕ B` on a common subtree.
    pub fn minkowski_sum(&self, other: &Self) -> Result<Self, PolyError> {
        if self.root != other.root || self.d != other.d {
            return Err(PolyError::AmbientMismatch(format!(
                "subtree roots {} and {}",
                self.root, other.root
            )));
        }
        let shift = self.vars.len();
        let mut out = self.clone();
        out.vars.extend(other.vars.iter().copied());
        for (k, entries) in other.image.iter().enumerate() {
            out.image[k].extend(entries.iter().map(|(v, c)| (v + shift, c.clone())));
        }
        out.rows.extend(other.rows.iter().map(|r| LinRow {
            coeffs: r.coeffs.iter().map(|(v, c)| (v + shift, c.clone())).collect(),
            relation: r.relation,
            rhs: r.rhs.clone(),
        }));
        out.orthant = self.orthant || other.orthant;
        Ok(out)
    }

    /// Views a set on the subtree of a descendant as a set on the subtree of
    /// `root`, with zero payoff outside the descendant's leaves.
    pub fn embed(&self, tree: &ScenarioTree<S>, root: usize) -> Result<Self, PolyError> {
        if !tree.is_descendant(self.root, root) {
            return Err(PolyError::AmbientMismatch(format!("node {} is not below {}", tree.id(self.root), tree.id(root))));
        }
        let mut out = LiftedSet::zero(tree, root);
        out.vars = self.vars.clone();
        out.rows = self.rows.clone();
        let start = (self.leaf_offset - out.leaf_offset) * self.d;
        for (k, entries) in self.image.iter().enumerate() {
            out.image[start + k] = entries.clone();
        }
        out.orthant = false;
        Ok(out)
    }

    /// Intersects with `{Z : Z is 𝓕_s-measurable and M-valued}`.
    pub fn restrict_measurable(&self, tree: &ScenarioTree<S>, s: usize) -> Self {
        let mut out = self.clone();
        let m = tree.m();
        for &nu in tree.descendants_at(self.root, s) {
            let r = tree.leaf_range(nu);
            let first = r.start - self.leaf_offset;
            for l in (r.start + 1 - self.leaf_offset)..(r.end - self.leaf_offset) {
                for i in 0..m {
                    let mut coeffs = self.image[l * self.d + i].clone();
                    coeffs.extend(self.image[first * self.d + i].iter().map(|(v, c)| (*v, -c.clone())));
                    if let Some(c) = compact(coeffs) {
                        out.rows.push(LinRow { coeffs: c, relation: Relation::Eq, rhs: S::zero() });
                    }
                }
            }
        }
        for l in 0..self.n_leaves {
            for i in m..self.d {
                if let Some(c) = compact(self.image[l * self.d + i].clone()) {
                    out.rows.push(LinRow { coeffs: c, relation: Relation::Eq, rhs: S::zero() });
                }
            }
        }
        out.orthant = self.orthant && m == self.d && s == tree.horizon();
        out
    }

    /// Whether `self` is `other` with extra constraints appended, which makes
    /// it a subset of `other` by construction.
    pub fn refines(&self, other: &Self) -> bool {
        self.root == other.root
            && self.d == other.d
            && self.vars == other.vars
            && self.image == other.image
            && self.rows.len() >= other.rows.len()
            && self.rows[..other.rows.len()] == other.rows[..]
    }

    /// The recession cone: homogenized constraints.
    pub fn recession_cone(&self) -> Self {
        let mut out = self.clone();
        for r in out.rows.iter_mut() {
            r.rhs = S::zero();
        }
        out
    }

    /// Appends the lifted system to `lp`, returning the variable map and the
    /// image expressions (one per coordinate).
    pub fn append_to(&self, lp: &mut LinearProgram<S>) -> (Vec<usize>, Vec<LinExpr<S>>) {
        let map: Vec<usize> = self
            .vars
            .iter()
            .map(|k| match k {
                VarKind::NonNeg => lp.add_nonneg(S::zero()),
                VarKind::Free => lp.add_free(S::zero()),
            })
            .collect();
        for r in &self.rows {
            lp.add_constraint(r.coeffs.iter().map(|(v, c)| (map[*v], c.clone())).collect(), r.relation, r.rhs.clone());
        }
        let image = self
            .image
            .iter()
            .map(|e| e.iter().map(|(v, c)| (map[*v], c.clone())).collect())
            .collect();
        (map, image)
    }

    pub fn membership(&self, z: &[Vec<S>]) -> Result<bool, PolyError> {
        self.check_point(z)?;
        let mut lp = LinearProgram::new(Sense::Minimize);
        let (_, image) = self.append_to(&mut lp);
        for (k, expr) in image.into_iter().enumerate() {
            lp.add_constraint(expr, Relation::Eq, z[k / self.d][k % self.d].clone());
        }
        Ok(solve_lp(&lp)?.status == LpStatus::Optimal)
    }

    /// `sup_{Z ∈ S} Σ_k c_k·(−Z_k)` for a raw coordinate weight vector `c`.
    pub fn support_weighted(&self, c: &[S]) -> Result<SupportOutcome<S>, PolyError> {
        if c.len() != self.dim() {
            return Err(PolyError::Shape(format!("direction of length {} for dimension {}", c.len(), self.dim())));
        }
        let mut lp = LinearProgram::new(Sense::Maximize);
        let (map, image) = self.append_to(&mut lp);
        for (k, expr) in image.iter().enumerate() {
            if c[k].is_exact_zero() {
                continue;
            }
            for (v, a) in expr {
                lp.objective[*v] = lp.objective[*v].clone() - c[k].clone() * a.clone();
            }
        }
        let _ = map;
        let out = solve_lp(&lp)?;
        Ok(match out.status {
            LpStatus::Unbounded => SupportOutcome { value: Ext::PosInf, maximizer: None },
            LpStatus::Infeasible => SupportOutcome { value: Ext::NegInf, maximizer: None },
            LpStatus::Optimal => {
                let z = self.evaluate_image(&image, &out.primal);
                SupportOutcome { value: Ext::Finite(out.value.unwrap()), maximizer: Some(z) }
            }
        })
    }

    /// `sup_{Z ∈ S} Σ_ω P(ω|root) v(ω)ᵀ(−Z(ω))`.
    pub fn support_value(&self, tree: &ScenarioTree<S>, v: &[Vec<S>]) -> Result<SupportOutcome<S>, PolyError> {
        self.check_point(v)?;
        let c = self.probability_weighted(tree, v);
        self.support_weighted(&c)
    }

    /// Flattens `v` into coordinate weights `P(ω|root)·v_i(ω)`.
    pub fn probability_weighted(&self, tree: &ScenarioTree<S>, v: &[Vec<S>]) -> Vec<S> {
        let leaves = tree.leaves();
        let mut c = Vec::with_capacity(self.dim());
        for (l, vl) in v.iter().enumerate() {
            let p = tree.cond_prob(leaves[self.leaf_offset + l], self.root);
            for x in vl {
                c.push(p.clone() * x.clone());
            }
        }
        c
    }

    fn evaluate_image(&self, image: &[LinExpr<S>], x: &[S]) -> Vec<Vec<S>> {
        let mut z = vec![vec![S::zero(); self.d]; self.n_leaves];
        for (k, expr) in image.iter().enumerate() {
            z[k / self.d][k % self.d] = expr.iter().fold(S::zero(), |a, (v, c)| a + c.clone() * x[*v].clone());
        }
        z
    }

    /// Encodes `α(c) = sup_{Z∈S} −cᵀZ` as a minimization block inside `lp`,
    /// where each weight `c_k` is a linear expression in existing variables.
    /// Feasibility of the block is equivalent to `α(c) < ∞`; the returned
    /// expression `hᵀη` equals `α(c)` at the block optimum.
    pub fn add_dual_block(&self, lp: &mut LinearProgram<S>, c: &[LinExpr<S>]) -> LinExpr<S> {
        assert_eq!(c.len(), self.dim());
        let etas: Vec<usize> = self
            .rows
            .iter()
            .map(|r| match r.relation {
                Relation::Le => lp.add_var(S::zero(), Some(S::zero()), None),
                Relation::Ge => lp.add_var(S::zero(), None, Some(S::zero())),
                Relation::Eq => lp.add_free(S::zero()),
            })
            .collect();
        let mut per_var: Vec<Vec<(usize, S)>> = vec![Vec::new(); self.vars.len()];
        for (r, row) in self.rows.iter().enumerate() {
            for (v, a) in &row.coeffs {
                per_var[*v].push((etas[r], a.clone()));
            }
        }
        for (k, entries) in self.image.iter().enumerate() {
            for (v, f) in entries {
                for (cv, cc) in &c[k] {
                    per_var[*v].push((*cv, f.clone() * cc.clone()));
                }
            }
        }
        for (v, coeffs) in per_var.into_iter().enumerate() {
            let coeffs = compact(coeffs).unwrap_or_default();
            let rel = match self.vars[v] {
                VarKind::NonNeg => Relation::Ge,
                VarKind::Free => Relation::Eq,
            };
            if coeffs.is_empty() {
                continue;
            }
            lp.add_constraint(coeffs, rel, S::zero());
        }
        self.rows
            .iter()
            .zip(&etas)
            .filter(|(r, _)| !r.rhs.is_exact_zero())
            .map(|(r, e)| (*e, r.rhs.clone()))
            .collect()
    }

    /// Converts coefficients to another backend.
    pub fn convert<T: Scalar>(&self, f: &impl Fn(&S) -> T) -> LiftedSet<T> {
        LiftedSet {
            root: self.root,
            leaf_offset: self.leaf_offset,
            n_leaves: self.n_leaves,
            d: self.d,
            vars: self.vars.clone(),
            image: self.image.iter().map(|e| e.iter().map(|(v, c)| (*v, f(c))).collect()).collect(),
            rows: self
                .rows
                .iter()
                .map(|r| LinRow {
                    coeffs: r.coeffs.iter().map(|(v, c)| (*v, f(c))).collect(),
                    relation: r.relation,
                    rhs: f(&r.rhs),
                })
                .collect(),
            orthant: self.orthant,
        }
    }
}

/// Merges duplicate indices and drops zeros; `None` when nothing remains.
pub fn compact<S: Scalar>(mut coeffs: Vec<(usize, S)>) -> Option<Vec<(usize, S)>> {
    coeffs.sort_by_key(|(v, _)| *v);
    let mut out: Vec<(usize, S)> = Vec::with_capacity(coeffs.len());
    for (v, c) in coeffs {
        match out.last_mut() {
            Some((lv, lc)) if *lv == v => *lc = lc.clone() + c,
            _ => out.push((v, c)),
        }
    }
    out.retain(|(_, c)| !c.is_exact_zero());
    if out.is_empty() {
        None
    } else {
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Rational;
    use crate::tree::uniform_branching;

    fn q(n: i64, d: i64) -> Rational {
        Rational::ratio(n, d)
    }

    fn one_leaf() -> ScenarioTree<Rational> {
        uniform_branching(2, 2, &[])
    }

    fn pt(a: i64, b: i64) -> Vec<Vec<Rational>> {
        vec![vec![q(a, 1), q(b, 1)]]
    }

    #[test]
    fn empty_description_rejected() {
        let t = one_leaf();
        assert!(matches!(LiftedSet::cone(&t, 0, &[], false), Err(PolyError::EmptyDescription)));
    }

    #[test]
    fn orthant_membership_and_support() {
        let t = one_leaf();
        let a = LiftedSet::hull(&t, 0, &[pt(0, 0)], &[], true).unwrap();
        assert!(a.membership(&pt(0, 0)).unwrap());
        assert!(!a.membership(&pt(1, -1)).unwrap());
        assert_eq!(a.support_value(&t, &pt(1, 2)).unwrap().value, Ext::Finite(q(0, 1)));
        assert_eq!(a.support_value(&t, &pt(1, -1)).unwrap().value, Ext::PosInf);
    }

    #[test]
    fn bid_ask_cone_support() {
        let t = one_leaf();
        let gens = vec![
            vec![vec![q(-9, 10), q(1, 1)]],
            vec![vec![q(11, 10), q(-1, 1)]],
            pt(1, 0),
            pt(0, 1),
        ];
        let k = LiftedSet::cone(&t, 0, &gens, false).unwrap();
        assert!(k.membership(&[vec![q(-9, 10), q(1, 1)]]).unwrap());
        assert!(!k.membership(&pt(-1, 1)).unwrap());
        assert_eq!(k.support_value(&t, &pt(1, 1)).unwrap().value, Ext::Finite(q(0, 1)));
        assert_eq!(k.support_value(&t, &pt(1, 2)).unwrap().value, Ext::PosInf);
    }

    #[test]
    fn sum_of_opposite_rays_spans_line() {
        let t = one_leaf();
        let a = LiftedSet::cone(&t, 0, &[pt(-1, 1)], false).unwrap();
        let b = LiftedSet::cone(&t, 0, &[pt(1, -1)], false).unwrap();
        let s = a.minkowski_sum(&b).unwrap();
        assert!(s.membership(&pt(5, -5)).unwrap());
        assert!(s.membership(&pt(-3, 3)).unwrap());
        assert!(!s.membership(&pt(1, 0)).unwrap());
        let z = LiftedSet::zero(&t, 0);
        let az = a.minkowski_sum(&z).unwrap();
        assert!(az.membership(&pt(-2, 2)).unwrap());
        assert!(!az.membership(&pt(2, -2)).unwrap());
    }

    #[test]
    fn measurability_restriction() {
        let t = uniform_branching(2, 2, &[vec![q(1, 2), q(1, 2)]]);
        let a = LiftedSet::orthant(&t, 0);
        let r = a.restrict_measurable(&t, 0);
        assert!(!r.membership(&[vec![q(1, 1), q(0, 1)], vec![q(2, 1), q(0, 1)]]).unwrap());
        assert!(r.membership(&[vec![q(1, 1), q(3, 1)], vec![q(1, 1), q(3, 1)]]).unwrap());
        let rt = a.restrict_measurable(&t, 1);
        assert!(rt.membership(&[vec![q(1, 1), q(0, 1)], vec![q(2, 1), q(0, 1)]]).unwrap());
    }

    #[test]
    fn embedded_set_is_zero_elsewhere() {
        let t = uniform_branching(2, 2, &[vec![q(1, 2), q(1, 2)]]);
        let child = t.nodes_at(1)[1];
        let k = LiftedSet::orthant(&t, child);
        let e = k.embed(&t, 0).unwrap();
        assert!(e.membership(&[vec![q(0, 1), q(0, 1)], vec![q(1, 1), q(2, 1)]]).unwrap());
        assert!(!e.membership(&[vec![q(1, 1), q(0, 1)], vec![q(1, 1), q(2, 1)]]).unwrap());
    }

    #[test]
    fn dual_block_reproduces_support_value() {
        let t = uniform_branching(2, 2, &[vec![q(1, 2), q(1, 2)]]);
        // Hull of two base points plus the orthant: support is finite for c ≥ 0.
        let pts = vec![
            vec![vec![q(-1, 1), q(0, 1)], vec![q(0, 1), q(0, 1)]],
            vec![vec![q(0, 1), q(0, 1)], vec![q(0, 1), q(-2, 1)]],
        ];
        let a = LiftedSet::hull(&t, 0, &pts, &[], true).unwrap();
        let c = vec![q(1, 1), q(0, 1), q(0, 1), q(1, 2)];
        let direct = a.support_weighted(&c).unwrap().value;
        let mut lp = LinearProgram::new(Sense::Minimize);
        let cexpr: Vec<LinExpr<Rational>> = c
            .iter()
            .map(|x| {
                let v = lp.add_var(q(0, 1), Some(x.clone()), Some(x.clone()));
                vec![(v, q(1, 1))]
            })
            .collect();
        let terms = a.add_dual_block(&mut lp, &cexpr);
        for (v, h) in terms {
            lp.objective[v] = lp.objective[v].clone() + h;
        }
        let out = solve_lp(&lp).unwrap();
        assert_eq!(direct, Ext::Finite(q(1, 1)));
        assert_eq!(out.value, Some(q(1, 1)));
    }
}
