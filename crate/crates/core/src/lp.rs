//! Dense two-phase simplex over any [`Scalar`] backend.
//!
//! Pivoting uses Dantzig's largest-coefficient rule and falls back to Bland's
//! rule on degenerate stalls, so the method terminates. Every `Optimal`
//! outcome is re-verified against the original program: primal residuals and
//! the duality gap are recomputed from scratch and a failure is reported as
//! [`LpError::Numerical`] rather than returned as a wrong optimum. In
//! floating point, infeasible verdicts must carry a Farkas multiplier and
//! unbounded verdicts a feasible point plus descent ray, both checked
//! against the untransformed rows. Anything that fails a check, or hits the
//! iteration limit, is re-derived in exact rational arithmetic from the same
//! data.

use serde::Serialize;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, Zero};

use crate::scalar::{Rational, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Clone, Debug)]
pub struct Constraint<S> {
    pub coeffs: Vec<(usize, S)>,
    pub relation: Relation,
    pub rhs: S,
}

#[derive(Clone, Debug)]
pub struct LinearProgram<S> {
    pub sense: Sense,
    pub objective: Vec<S>,
    pub lower: Vec<Option<S>>,
    pub upper: Vec<Option<S>>,
    pub constraints: Vec<Constraint<S>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Clone, Debug)]
pub struct LpOutcome<S> {
    pub status: LpStatus,
    /// Optimal objective value (original sense).
    pub value: Option<S>,
    /// Primal solution when optimal.
    pub primal: Vec<S>,
    /// Shadow price of each constraint's right-hand side: the derivative of
    /// the optimal value with respect to `rhs`.
    pub duals: Vec<S>,
    /// Dual objective recomputed from `duals` and the variable bounds.
    pub dual_value: Option<S>,
    pub primal_residual: Option<S>,
}

impl<S: Scalar> LpOutcome<S> {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

#[derive(Clone, Debug, thiserror::Error)]
pub enum LpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite coefficient in {0}")]
    NonFinite(String),
    #[error("iteration limit {0} reached")]
    IterationLimit(usize),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl<S: Scalar> LinearProgram<S> {
    pub fn new(sense: Sense) -> Self {
        LinearProgram {
            sense,
            objective: Vec::new(),
            lower: Vec::new(),
            upper: Vec::new(),
            constraints: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_var(&mut self, cost: S, lower: Option<S>, upper: Option<S>) -> usize {
        self.objective.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.objective.len() - 1
    }

    /// Adds a variable bounded below by zero.
    pub fn add_nonneg(&mut self, cost: S) -> usize {
        self.add_var(cost, Some(S::zero()), None)
    }

    pub fn add_free(&mut self, cost: S) -> usize {
        self.add_var(cost, None, None)
    }

    pub fn add_constraint(&mut self, coeffs: Vec<(usize, S)>, relation: Relation, rhs: S) -> usize {
        self.constraints.push(Constraint { coeffs, relation, rhs });
        self.constraints.len() - 1
    }

    fn check(&self) -> Result<(), LpError> {
        let n = self.objective.len();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(LpError::DimensionMismatch(format!(
                "{} objective coefficients, {} lower and {} upper bounds",
                n,
                self.lower.len(),
                self.upper.len()
            )));
        }
        let finite = |v: &S| v.to_f64().is_finite() || S::is_exact();
        if !self.objective.iter().all(finite) {
            return Err(LpError::NonFinite("objective".into()));
        }
        for (i, c) in self.constraints.iter().enumerate() {
            if let Some(&(j, _)) = c.coeffs.iter().find(|(j, _)| *j >= n) {
                return Err(LpError::DimensionMismatch(format!(
                    "constraint {i} references variable {j} of {n}"
                )));
            }
            if !finite(&c.rhs) || !c.coeffs.iter().all(|(_, v)| finite(v)) {
                return Err(LpError::NonFinite(format!("constraint {i}")));
            }
        }
        Ok(())
    }
}

/// Original variable `x = offset + sign·y[pos] − y[neg]`.
#[derive(Clone, Debug)]
struct VarMap<S> {
    pos: usize,
    neg: Option<usize>,
    negate: bool,
    offset: S,
}

struct Tableau<S> {
    store: Store<S>,
    basis: Vec<usize>,
    ncols: usize,
    pivot_floor: S,
}

enum Store<S> {
    Float {
        /// `rows[i]` has `ncols + 1` entries; the last is the right-hand side.
        rows: Vec<Vec<S>>,
        /// Reduced costs; the last entry is minus the objective value.
        cost_row: Vec<S>,
    },
    Exact(IntegerTableau),
}

/// Fraction-free tableau: every constraint row is scaled to integers and
/// the slack or artificial columns of that row are rescaled so the starting
/// basis stays the identity. Integer pivoting keeps every row equal to the
/// current basis determinant `det` times the scaled tableau, with exact
/// divisions. Rows untouched by a pivot are brought up to date lazily, so
/// row `i` holds `row_det[i]` times the scaled tableau.
struct IntegerTableau {
    rows: Vec<Vec<BigInt>>,
    row_det: Vec<BigInt>,
    det: BigInt,
    /// Scaled reduced costs `cost[j] / cost_den`.
    cost: Vec<BigInt>,
    cost_den: BigInt,
    /// Column `j` of the scaled program is column `j` of the original times
    /// `1 / col_div[j]`.
    col_div: Vec<BigInt>,
}

impl IntegerTableau {
    /// `owner[j]` names the single row in which column `j` appears, for
    /// slack and artificial columns.
    fn new(rows: &[Vec<Rational>], owner: &[Option<usize>]) -> Self {
        let mut col_div: Vec<BigInt> = vec![BigInt::one(); owner.len() + 1];
        let mut int_rows = Vec::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            let lcm = row.iter().fold(BigInt::one(), |acc, v| acc.lcm(v.denom()));
            int_rows.push(
                row.iter()
                    .enumerate()
                    .map(|(j, v)| {
                        let scaled = v.numer() * (&lcm / v.denom());
                        if owner.get(j) == Some(&Some(i)) {
                            scaled / &lcm
                        } else {
                            scaled
                        }
                    })
                    .collect::<Vec<BigInt>>(),
            );
            for (j, o) in owner.iter().enumerate() {
                if *o == Some(i) {
                    col_div[j] = lcm.clone();
                }
            }
        }
        let ncols = owner.len();
        IntegerTableau { row_det: vec![BigInt::one(); int_rows.len()], rows: int_rows, det: BigInt::one(), cost: vec![BigInt::zero(); ncols + 1], cost_den: BigInt::one(), col_div }
    }

    fn value(&self, basis: &[usize], i: usize, j: usize) -> Rational {
        Rational::new(self.rows[i][j].clone() * self.col_div[j].clone(), self.row_det[i].clone() * self.col_div[basis[i]].clone())
    }

    fn cost_value(&self, j: usize) -> Rational {
        Rational::new(self.cost[j].clone() * self.col_div[j].clone(), self.cost_den.clone())
    }

    fn set_cost(&mut self, cost: &[Rational]) {
        let scaled: Vec<Rational> =
            cost.iter().zip(&self.col_div).map(|(c, k)| c / Rational::from_integer(k.clone())).collect();
        let den = scaled.iter().fold(BigInt::one(), |acc, v| acc.lcm(v.denom()));
        self.cost = scaled.iter().map(|v| v.numer() * (den.clone() / v.denom())).collect();
        self.cost_den = den;
    }

    /// Rescales row `i` from its stored determinant to the current one.
    fn refresh(&mut self, i: usize) {
        if self.row_det[i] == self.det {
            return;
        }
        let (num, den) = (&self.det, &self.row_det[i]);
        for v in self.rows[i].iter_mut() {
            if !v.is_zero() {
                *v *= num;
                *v /= den;
            }
        }
        self.row_det[i] = self.det.clone();
    }

    fn pivot(&mut self, r: usize, c: usize) {
        self.refresh(r);
        let p = self.rows[r][c].clone();
        let nz: Vec<usize> = (0..self.rows[r].len()).filter(|&j| !self.rows[r][j].is_zero()).collect();
        for i in 0..self.rows.len() {
            if i == r || self.rows[i][c].is_zero() {
                continue;
            }
            self.refresh(i);
            let (row, pivot_row) = if i < r {
                let (a, b) = self.rows.split_at_mut(r);
                (&mut a[i], &b[0])
            } else {
                let (a, b) = self.rows.split_at_mut(i);
                (&mut b[0], &a[r])
            };
            let f = std::mem::take(&mut row[c]);
            for (j, v) in row.iter_mut().enumerate() {
                if j != c && !v.is_zero() {
                    *v *= &p;
                    if pivot_row[j].is_zero() {
                        *v /= &self.det;
                    }
                }
            }
            for &j in &nz {
                if j != c {
                    row[j] -= &f * &pivot_row[j];
                    row[j] /= &self.det;
                }
            }
            self.row_det[i] = p.clone();
            if p.is_negative() {
                for v in row.iter_mut() {
                    *v = -std::mem::take(v);
                }
                self.row_det[i] = -p.clone();
            }
        }
        let pivot_row = &self.rows[r];
        let f = std::mem::take(&mut self.cost[c]);
        if !f.is_zero() {
            for (j, v) in self.cost.iter_mut().enumerate() {
                if j != c {
                    *v *= &p;
                    if !pivot_row[j].is_zero() {
                        *v -= &f * &pivot_row[j];
                    }
                }
            }
            self.cost_den *= &p;
            let g = self.cost.iter().fold(self.cost_den.clone(), |acc, v| acc.gcd(v));
            if !g.is_one() {
                for v in self.cost.iter_mut() {
                    *v /= &g;
                }
                self.cost_den /= &g;
            }
            if self.cost_den.is_negative() {
                for v in self.cost.iter_mut() {
                    *v = -std::mem::take(v);
                }
                self.cost_den = -std::mem::take(&mut self.cost_den);
            }
        }
        self.row_det[r] = p.clone();
        if p.is_negative() {
            for v in self.rows[r].iter_mut() {
                *v = -std::mem::take(v);
            }
            self.row_det[r] = -p.clone();
        }
        self.det = p;
    }
}

impl<S: Scalar> Tableau<S> {
    fn new(rows: Vec<Vec<S>>, basis: Vec<usize>, owner: &[Option<usize>], pivot_floor: S) -> Self {
        let ncols = owner.len();
        let store = if S::is_exact() {
            let exact: Vec<Vec<Rational>> =
                rows.iter().map(|r| r.iter().map(|v| v.to_rational().expect("exact entry")).collect()).collect();
            Store::Exact(IntegerTableau::new(&exact, owner))
        } else {
            Store::Float { rows, cost_row: vec![S::zero(); ncols + 1] }
        };
        Tableau { store, basis, ncols, pivot_floor }
    }

    fn value(&self, i: usize, j: usize) -> S {
        match &self.store {
            Store::Float { rows, .. } => rows[i][j].clone(),
            Store::Exact(t) => S::from_rational(&t.value(&self.basis, i, j)),
        }
    }

    fn cost(&self, j: usize) -> S {
        match &self.store {
            Store::Float { cost_row, .. } => cost_row[j].clone(),
            Store::Exact(t) => S::from_rational(&t.cost_value(j)),
        }
    }

    fn set_cost_row(&mut self, cost: Vec<S>) {
        match &mut self.store {
            Store::Float { cost_row, .. } => *cost_row = cost,
            Store::Exact(t) => {
                let exact: Vec<Rational> = cost.iter().map(|v| v.to_rational().expect("exact entry")).collect();
                t.set_cost(&exact);
            }
        }
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let ncols = self.ncols;
        self.basis[r] = c;
        let Store::Float { rows, cost_row } = &mut self.store else {
            let Store::Exact(t) = &mut self.store else { unreachable!() };
            t.pivot(r, c);
            return;
        };
        let p = rows[r][c].clone();
        let inv = S::one() / p;
        for v in rows[r].iter_mut() {
            if !v.is_exact_zero() {
                *v = v.clone() * inv.clone();
            }
        }
        rows[r][c] = S::one();
        let nz: Vec<usize> = (0..=ncols).filter(|&j| !rows[r][j].is_exact_zero()).collect();
        let pivot_row = rows[r].clone();
        let eliminate = |row: &mut Vec<S>| {
            let f = row[c].clone();
            if f.is_exact_zero() {
                return;
            }
            for &j in &nz {
                row[j] = row[j].clone() - f.clone() * pivot_row[j].clone();
            }
            row[c] = S::zero();
        };
        for (i, row) in rows.iter_mut().enumerate() {
            if i != r {
                eliminate(row);
            }
        }
        eliminate(cost_row);
        let drop = self.pivot_floor.clone() / S::from_i64(100);
        for row in rows.iter_mut() {
            for j in &nz {
                if row[*j].abs() < drop {
                    row[*j] = S::zero();
                }
            }
        }
    }

    /// Entering column under Dantzig's rule, or the first eligible one under
    /// Bland's rule.
    fn entering(&self, allowed: &dyn Fn(usize) -> bool, use_bland: bool) -> Option<usize> {
        match &self.store {
            Store::Float { cost_row, .. } => {
                let mut entering = None;
                let mut best = -S::tolerance();
                for j in (0..self.ncols).filter(|&j| allowed(j)) {
                    if cost_row[j] < best {
                        entering = Some(j);
                        if use_bland {
                            break;
                        }
                        best = cost_row[j].clone();
                    }
                }
                entering
            }
            Store::Exact(t) => {
                let mut entering: Option<(usize, BigInt)> = None;
                for j in (0..self.ncols).filter(|&j| allowed(j)) {
                    if !t.cost[j].is_negative() {
                        continue;
                    }
                    if use_bland {
                        return Some(j);
                    }
                    let score = &t.cost[j] * &t.col_div[j];
                    if entering.as_ref().map_or(true, |(_, best)| score < *best) {
                        entering = Some((j, score));
                    }
                }
                entering.map(|(j, _)| j)
            }
        }
    }

    /// Leaving row by the minimum ratio test with ties broken by the smaller
    /// basic index, and whether the step is degenerate. `None` means the
    /// column is unbounded.
    fn leaving(&self, c: usize) -> Option<(usize, bool)> {
        let rhs = self.ncols;
        match &self.store {
            Store::Float { rows, .. } => {
                let mut leaving: Option<(usize, S)> = None;
                for (i, row) in rows.iter().enumerate() {
                    let a = &row[c];
                    if *a <= self.pivot_floor {
                        continue;
                    }
                    let ratio = row[rhs].clone() / a.clone();
                    let better = match &leaving {
                        None => true,
                        Some((bi, br)) => {
                            let diff = (ratio.clone() - br.clone()).to_f64();
                            diff < -1e-12 || (diff.abs() <= 1e-12 && self.basis[i] < self.basis[*bi])
                        }
                    };
                    if better {
                        leaving = Some((i, ratio));
                    }
                }
                leaving.map(|(i, ratio)| (i, ratio.is_zero_tol()))
            }
            Store::Exact(t) => {
                let mut leaving: Option<usize> = None;
                for (i, row) in t.rows.iter().enumerate() {
                    if !row[c].is_positive() {
                        continue;
                    }
                    let better = match leaving {
                        None => true,
                        Some(b) => {
                            let lhs = &row[rhs] * &t.rows[b][c];
                            let rhs_v = &t.rows[b][rhs] * &row[c];
                            lhs < rhs_v || (lhs == rhs_v && self.basis[i] < self.basis[b])
                        }
                    };
                    if better {
                        leaving = Some(i);
                    }
                }
                leaving.map(|i| (i, t.rows[i][rhs].is_zero()))
            }
        }
    }

    /// Runs simplex iterations on the current cost row. Returns the entering
    /// column along which the objective is unbounded below, if any.
    fn optimize(&mut self, allowed: &dyn Fn(usize) -> bool, limit: usize) -> Result<Option<usize>, LpError> {
        let mut degenerate_run = 0usize;
        let mut iterations = 0usize;
        let bland_after = 20;
        loop {
            iterations += 1;
            if iterations > limit {
                return Err(LpError::IterationLimit(limit));
            }
            let Some(c) = self.entering(allowed, degenerate_run >= bland_after) else {
                return Ok(None);
            };
            let Some((r, degenerate)) = self.leaving(c) else {
                return Ok(Some(c));
            };
            degenerate_run = if degenerate { degenerate_run + 1 } else { 0 };
            self.pivot(r, c);
        }
    }
}

pub fn solve_lp<S: Scalar>(lp: &LinearProgram<S>) -> Result<LpOutcome<S>, LpError> {
    let first = solve_tableau(lp, S::pivot_tolerance());
    if S::is_exact() {
        return first;
    }
    match &first {
        Ok(_) | Err(LpError::DimensionMismatch(_) | LpError::NonFinite(_)) => first,
        _ => solve_exact(lp),
    }
}

/// The same program with every number mapped through `f`.
fn convert<S: Scalar, T>(lp: &LinearProgram<S>, f: impl Fn(&S) -> Option<T>) -> Result<LinearProgram<T>, LpError> {
    let conv = |v: &S| f(v).ok_or_else(|| LpError::NonFinite("coefficient".into()));
    let opt = |v: &Option<S>| v.as_ref().map(conv).transpose();
    Ok(LinearProgram {
        sense: lp.sense,
        objective: lp.objective.iter().map(conv).collect::<Result<_, _>>()?,
        lower: lp.lower.iter().map(opt).collect::<Result<_, _>>()?,
        upper: lp.upper.iter().map(opt).collect::<Result<_, _>>()?,
        constraints: lp
            .constraints
            .iter()
            .map(|c| {
                Ok(Constraint {
                    coeffs: c.coeffs.iter().map(|(j, a)| Ok((*j, conv(a)?))).collect::<Result<_, LpError>>()?,
                    relation: c.relation,
                    rhs: conv(&c.rhs)?,
                })
            })
            .collect::<Result<_, LpError>>()?,
    })
}

/// The simplest rational within `1e-12` relative distance of `x`, found by
/// continued fractions; the exact binary value when none is short enough.
fn nearby_rational(x: f64) -> Option<Rational> {
    let exact = Rational::from_f64(x)?;
    let tol = 1e-12 * x.abs().max(1.0);
    let (mut h0, mut h1) = (BigInt::from(0), BigInt::from(1));
    let (mut k0, mut k1) = (BigInt::from(1), BigInt::from(0));
    let mut rest = exact.clone();
    for _ in 0..40 {
        let a = rest.floor().to_integer();
        let h2 = a.clone() * h1.clone() + h0;
        let k2 = a.clone() * k1.clone() + k0;
        let approx = Rational::new(h2.clone(), k2.clone());
        if (approx.to_f64() - x).abs() <= tol {
            return Some(approx);
        }
        let frac = rest - Rational::from_integer(a);
        if frac.is_exact_zero() {
            break;
        }
        rest = <Rational as One>::one() / frac;
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
    }
    Some(exact)
}

fn solve_exact<S: Scalar>(lp: &LinearProgram<S>) -> Result<LpOutcome<S>, LpError> {
    let exact = convert(lp, |v| nearby_rational(v.to_f64()))?;
    let out = solve_tableau(&exact, Rational::from_i64(0))?;
    let back = |v: &Rational| S::from_f64(v.to_f64()).expect("finite rational");
    Ok(LpOutcome {
        status: out.status,
        value: out.value.as_ref().map(back),
        primal: out.primal.iter().map(back).collect(),
        duals: out.duals.iter().map(back).collect(),
        dual_value: out.dual_value.as_ref().map(back),
        primal_residual: out.primal_residual.as_ref().map(back),
    })
}

fn solve_tableau<S: Scalar>(lp: &LinearProgram<S>, pivot_floor: S) -> Result<LpOutcome<S>, LpError> {
    lp.check()?;
    let n = lp.num_vars();
    let minimize = lp.sense == Sense::Minimize;
    let cost_min: Vec<S> = lp
        .objective
        .iter()
        .map(|c| if minimize { c.clone() } else { -c.clone() })
        .collect();

    // Map original variables onto nonnegative columns.
    let mut var_map = Vec::with_capacity(n);
    let mut ncols_struct = 0usize;
    let mut bound_rows: Vec<(usize, S)> = Vec::new();
    for j in 0..n {
        match (&lp.lower[j], &lp.upper[j]) {
            (Some(l), upper) => {
                let pos = ncols_struct;
                ncols_struct += 1;
                if let Some(u) = upper {
                    if u.clone() - l.clone() < -S::tolerance() {
                        return Ok(infeasible(lp));
                    }
                    bound_rows.push((pos, u.clone() - l.clone()));
                }
                var_map.push(VarMap { pos, neg: None, negate: false, offset: l.clone() });
            }
            (None, Some(u)) => {
                let pos = ncols_struct;
                ncols_struct += 1;
                var_map.push(VarMap { pos, neg: None, negate: true, offset: u.clone() });
            }
            (None, None) => {
                let pos = ncols_struct;
                ncols_struct += 2;
                var_map.push(VarMap { pos, neg: Some(pos + 1), negate: false, offset: S::zero() });
            }
        }
    }

    // Standard rows: (sparse coefficients over structural columns, relation, rhs).
    let mut std_rows: Vec<(Vec<(usize, S)>, Relation, S)> = Vec::new();
    for c in &lp.constraints {
        let mut coeffs: Vec<(usize, S)> = Vec::new();
        let mut rhs = c.rhs.clone();
        for (j, a) in &c.coeffs {
            let vm = &var_map[*j];
            rhs = rhs - a.clone() * vm.offset.clone();
            let a_pos = if vm.negate { -a.clone() } else { a.clone() };
            coeffs.push((vm.pos, a_pos));
            if let Some(neg) = vm.neg {
                coeffs.push((neg, -a.clone()));
            }
        }
        std_rows.push((coeffs, c.relation, rhs));
    }
    for (col, ub) in &bound_rows {
        std_rows.push((vec![(*col, S::one())], Relation::Le, ub.clone()));
    }
    let mut cost_struct = vec![S::zero(); ncols_struct];
    for j in 0..n {
        let vm = &var_map[j];
        let cp = if vm.negate { -cost_min[j].clone() } else { cost_min[j].clone() };
        cost_struct[vm.pos] = cost_struct[vm.pos].clone() + cp;
        if let Some(neg) = vm.neg {
            cost_struct[neg] = cost_struct[neg].clone() - cost_min[j].clone();
        }
    }

    // Normalize right-hand sides to be nonnegative, turning homogeneous `≥`
    // rows into `≤` rows so their slacks start basic, and lay out slack and
    // artificial columns.
    let m = std_rows.len();
    let mut flips = vec![false; m];
    let mut relations = Vec::with_capacity(m);
    for (i, (coeffs, rel, rhs)) in std_rows.iter_mut().enumerate() {
        if *rhs < S::zero() || (*rel == Relation::Ge && rhs.is_exact_zero()) {
            flips[i] = true;
            *rhs = -rhs.clone();
            for (_, a) in coeffs.iter_mut() {
                *a = -a.clone();
            }
            *rel = match rel {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
        }
        relations.push(*rel);
    }
    let mut ncols = ncols_struct;
    let mut slack_col = vec![None; m];
    let mut art_col = vec![None; m];
    for i in 0..m {
        match relations[i] {
            Relation::Le => {
                slack_col[i] = Some(ncols);
                ncols += 1;
            }
            Relation::Ge => {
                slack_col[i] = Some(ncols);
                ncols += 1;
                art_col[i] = Some(ncols);
                ncols += 1;
            }
            Relation::Eq => {
                art_col[i] = Some(ncols);
                ncols += 1;
            }
        }
    }
    let is_artificial = {
        let mut flags = vec![false; ncols];
        for c in art_col.iter().flatten() {
            flags[*c] = true;
        }
        flags
    };

    let mut rows = Vec::with_capacity(m);
    let mut basis = Vec::with_capacity(m);
    for i in 0..m {
        let mut row = vec![S::zero(); ncols + 1];
        for (j, a) in &std_rows[i].0 {
            row[*j] = row[*j].clone() + a.clone();
        }
        match relations[i] {
            Relation::Le => {
                row[slack_col[i].unwrap()] = S::one();
                basis.push(slack_col[i].unwrap());
            }
            Relation::Ge => {
                row[slack_col[i].unwrap()] = -S::one();
                row[art_col[i].unwrap()] = S::one();
                basis.push(art_col[i].unwrap());
            }
            Relation::Eq => {
                row[art_col[i].unwrap()] = S::one();
                basis.push(art_col[i].unwrap());
            }
        }
        row[ncols] = std_rows[i].2.clone();
        rows.push(row);
    }

    // Phase 1: minimize the sum of artificials.
    let mut cost_row = vec![S::zero(); ncols + 1];
    for c in art_col.iter().flatten() {
        cost_row[*c] = S::one();
    }
    for i in 0..m {
        if art_col[i].is_some() {
            for j in 0..=ncols {
                if !rows[i][j].is_exact_zero() {
                    cost_row[j] = cost_row[j].clone() - rows[i][j].clone();
                }
            }
        }
    }
    let mut owner = vec![None; ncols];
    for i in 0..m {
        for c in slack_col[i].iter().chain(art_col[i].iter()) {
            owner[*c] = Some(i);
        }
    }
    let mut tab = Tableau::new(rows, basis, &owner, pivot_floor);
    tab.set_cost_row(cost_row);
    let limit = if S::is_exact() { 50_000 + 200 * (m + ncols) } else { 2_000 + 20 * (m + ncols) };
    let has_artificials = art_col.iter().any(|c| c.is_some());
    if has_artificials {
        tab.optimize(&|_| true, limit)?;
        let infeas = -tab.cost(ncols);
        let scale = std_rows
            .iter()
            .fold(S::one(), |acc, r| S::max_of(acc, r.2.abs()));
        if (infeas.clone() / scale).is_pos_tol() {
            if !S::is_exact() {
                let pi: Vec<S> = (0..m)
                    .map(|i| match relations[i] {
                        Relation::Le => -tab.cost(slack_col[i].unwrap()),
                        _ => S::one() - tab.cost(art_col[i].unwrap()),
                    })
                    .collect();
                if !farkas_certifies(&std_rows, ncols_struct, pi) {
                    return Err(LpError::Numerical("infeasibility certificate rejected".into()));
                }
            }
            return Ok(infeasible(lp));
        }
        // Drive artificials out of the basis where possible.
        for r in 0..m {
            if is_artificial[tab.basis[r]] {
                if let Some(c) = (0..ncols)
                    .find(|&j| !is_artificial[j] && tab.value(r, j).abs() > S::max_of(S::pivot_tolerance(), S::tolerance()))
                {
                    tab.pivot(r, c);
                }
            }
        }
    }

    // Phase 2.
    let mut cost_row = vec![S::zero(); ncols + 1];
    cost_row[..ncols_struct].clone_from_slice(&cost_struct);
    for i in 0..m {
        let cb = if tab.basis[i] < ncols_struct {
            cost_struct[tab.basis[i]].clone()
        } else {
            S::zero()
        };
        if cb.is_exact_zero() {
            continue;
        }
        for j in 0..=ncols {
            let v = tab.value(i, j);
            if !v.is_exact_zero() {
                cost_row[j] = cost_row[j].clone() - cb.clone() * v;
            }
        }
    }
    tab.set_cost_row(cost_row);
    if let Some(c) = tab.optimize(&|j| !is_artificial[j], limit)? {
        if !S::is_exact() {
            let mut point = vec![S::zero(); ncols_struct];
            let mut ray = vec![S::zero(); ncols_struct];
            if c < ncols_struct {
                ray[c] = S::one();
            }
            for (i, &b) in tab.basis.iter().enumerate() {
                if b < ncols_struct {
                    point[b] = tab.value(i, ncols);
                    ray[b] = -tab.value(i, c);
                }
            }
            if !ray_certifies(&std_rows, &cost_struct, &point, ray) {
                return Err(LpError::Numerical("unboundedness certificate rejected".into()));
            }
        }
        return Ok(LpOutcome {
            status: LpStatus::Unbounded,
            value: None,
            primal: Vec::new(),
            duals: Vec::new(),
            dual_value: None,
            primal_residual: None,
        });
    }

    // Primal solution.
    let mut y = vec![S::zero(); ncols];
    for (i, &b) in tab.basis.iter().enumerate() {
        y[b] = tab.value(i, ncols);
    }
    let primal: Vec<S> = var_map
        .iter()
        .map(|vm| {
            let mut x = vm.offset.clone();
            x = if vm.negate { x - y[vm.pos].clone() } else { x + y[vm.pos].clone() };
            if let Some(neg) = vm.neg {
                x = x - y[neg].clone();
            }
            x
        })
        .collect();

    // Shadow prices of the min-form program for the original rows.
    let n_orig = lp.constraints.len();
    let mut duals_min = Vec::with_capacity(n_orig);
    for i in 0..n_orig {
        let id_col = match relations[i] {
            Relation::Le => slack_col[i].unwrap(),
            _ => art_col[i].unwrap(),
        };
        let pi = -tab.cost(id_col);
        duals_min.push(if flips[i] { -pi } else { pi });
    }

    verify_and_package(lp, &cost_min, primal, duals_min)
}

fn infeasible<S: Scalar>(_lp: &LinearProgram<S>) -> LpOutcome<S> {
    LpOutcome {
        status: LpStatus::Infeasible,
        value: None,
        primal: Vec::new(),
        duals: Vec::new(),
        dual_value: None,
        primal_residual: None,
    }
}

fn row_dot<S: Scalar>(coeffs: &[(usize, S)], x: &[S]) -> S {
    coeffs.iter().fold(S::zero(), |acc, (j, a)| acc + a.clone() * x[*j].clone())
}

/// Checks `pi` as a Farkas multiplier for the standard rows over
/// nonnegative columns: sign-feasible, `pi^T A <= 0` and `pi^T b > 0`.
fn farkas_certifies<S: Scalar>(rows: &[(Vec<(usize, S)>, Relation, S)], ncols: usize, mut pi: Vec<S>) -> bool {
    for (p, (_, rel, _)) in pi.iter_mut().zip(rows) {
        let wrong = match rel {
            Relation::Le => *p > S::zero(),
            Relation::Ge => *p < S::zero(),
            Relation::Eq => false,
        };
        if wrong {
            *p = S::zero();
        }
    }
    let mut combo = vec![S::zero(); ncols];
    let mut weight = S::zero();
    let mut value = S::zero();
    for (p, (coeffs, _, rhs)) in pi.iter().zip(rows) {
        for (j, a) in coeffs {
            combo[*j] = combo[*j].clone() + p.clone() * a.clone();
            weight = S::max_of(weight, (p.clone() * a.clone()).abs());
        }
        value = value + p.clone() * rhs.clone();
    }
    let slack = S::tolerance() * (S::one() + weight);
    combo.iter().all(|v| *v <= slack) && value > slack * S::from_i64(100)
}

/// Checks that `point` is feasible for the standard rows and that `ray` is a
/// nonnegative recession direction of strictly decreasing cost.
fn ray_certifies<S: Scalar>(
    rows: &[(Vec<(usize, S)>, Relation, S)],
    cost: &[S],
    point: &[S],
    mut ray: Vec<S>,
) -> bool {
    let tol = S::tolerance();
    if ray.iter().any(|v| *v < -tol.clone()) {
        return false;
    }
    let norm = ray.iter().fold(S::zero(), |acc, v| S::max_of(acc, v.abs()));
    if !norm.is_pos_tol() {
        return false;
    }
    for v in ray.iter_mut() {
        *v = S::max_of(v.clone(), S::zero()) / norm.clone();
    }
    for (coeffs, rel, rhs) in rows {
        let at = row_dot(coeffs, point) - rhs.clone();
        let along = row_dot(coeffs, &ray);
        let scale = S::one() + rhs.abs();
        let ok = match rel {
            Relation::Le => at <= tol.clone() * scale && along <= tol.clone(),
            Relation::Ge => at >= -tol.clone() * scale && along >= -tol.clone(),
            Relation::Eq => at.abs() <= tol.clone() * scale && along.abs() <= tol.clone(),
        };
        if !ok {
            return false;
        }
    }
    let descent = cost.iter().zip(&ray).fold(S::zero(), |acc, (c, r)| acc + c.clone() * r.clone());
    descent < -tol * S::from_i64(100)
}

/// Recomputes feasibility and the dual objective from the original data.
fn verify_and_package<S: Scalar>(
    lp: &LinearProgram<S>,
    cost_min: &[S],
    primal: Vec<S>,
    duals_min: Vec<S>,
) -> Result<LpOutcome<S>, LpError> {
    let n = lp.num_vars();
    let tol = S::tolerance();
    let mut residual = S::zero();
    let mut primal_min = S::zero();
    for j in 0..n {
        primal_min = primal_min + cost_min[j].clone() * primal[j].clone();
        if let Some(l) = &lp.lower[j] {
            residual = S::max_of(residual, l.clone() - primal[j].clone());
        }
        if let Some(u) = &lp.upper[j] {
            residual = S::max_of(residual, primal[j].clone() - u.clone());
        }
    }
    let mut reduced = cost_min.to_vec();
    let mut dual_obj = S::zero();
    for (i, c) in lp.constraints.iter().enumerate() {
        let lhs = c
            .coeffs
            .iter()
            .fold(S::zero(), |acc, (j, a)| acc + a.clone() * primal[*j].clone());
        let diff = lhs - c.rhs.clone();
        let scale = S::one() + c.rhs.abs();
        let viol = match c.relation {
            Relation::Le => diff,
            Relation::Ge => -diff,
            Relation::Eq => diff.abs(),
        } / scale;
        residual = S::max_of(residual, viol);
        let yi = duals_min[i].clone();
        let sign_ok = match c.relation {
            Relation::Le => !yi.is_pos_tol(),
            Relation::Ge => !yi.is_neg_tol(),
            Relation::Eq => true,
        };
        if !sign_ok {
            return Err(LpError::Numerical(format!("dual sign violated on constraint {i}: {yi}")));
        }
        dual_obj = dual_obj + yi.clone() * c.rhs.clone();
        for (j, a) in &c.coeffs {
            reduced[*j] = reduced[*j].clone() - yi.clone() * a.clone();
        }
    }
    for j in 0..n {
        let r = reduced[j].clone();
        let term = if r.is_zero_tol() {
            r * primal[j].clone()
        } else if r > S::zero() {
            match &lp.lower[j] {
                Some(l) => r * l.clone(),
                None => return Err(LpError::Numerical(format!("dual infeasible at variable {j}: reduced cost {r}"))),
            }
        } else {
            match &lp.upper[j] {
                Some(u) => r * u.clone(),
                None => return Err(LpError::Numerical(format!("dual infeasible at variable {j}: reduced cost {r}"))),
            }
        };
        dual_obj = dual_obj + term;
    }
    if residual > tol.clone() * S::from_i64(10) || (S::is_exact() && residual.is_pos_tol()) {
        return Err(LpError::Numerical(format!("primal residual {residual}")));
    }
    let gap = (primal_min.clone() - dual_obj.clone()).abs();
    let allowed = if S::is_exact() {
        S::zero()
    } else {
        S::from_f64(1e-8).unwrap() * (S::one() + primal_min.abs())
    };
    if gap > allowed {
        return Err(LpError::Numerical(format!("duality gap {gap}")));
    }
    let minimize = lp.sense == Sense::Minimize;
    let flip = |v: S| if minimize { v } else { -v };
    Ok(LpOutcome {
        status: LpStatus::Optimal,
        value: Some(flip(primal_min)),
        primal,
        duals: duals_min.into_iter().map(flip).collect(),
        dual_value: Some(flip(dual_obj)),
        primal_residual: Some(S::max_of(residual, S::zero())),
    })
}
