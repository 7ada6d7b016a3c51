//! Acceptance criteria. Each criterion prints one `PASS` or `FAIL` line; the
//! process exits non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use mvrisk::fixtures::{
    bin1_claim, bin1_tree, bin2_market, bin2_superhedging, bin2_tree, broken_superhedging, frictionless, random_avar_levels,
    random_claim, random_market, random_tree, random_weight, BrokenKind,
};
use mvrisk::lp::{solve_lp, LinearProgram, LpStatus, Relation, Sense};
use mvrisk::markets::{composed_avar_system, market_penalty_sigma, superhedging_system, AvarLevels, SolvencyProcess};
use mvrisk::riskcore::AcceptanceSystem;
use mvrisk::scalar::{Ext, Rational, Scalar};
use mvrisk::timeconsistency::{
    check_acceptance_decomposition, check_quadruple, cocycle_check, maximizing_weight, moving_scalarization, naive_recursion_gap,
    quadruple_from_recursion, random_measure, recursion_gap, recursion_probes, recursion_rhs, sample_quadruples, DecompositionMode,
    Verdict,
};
use mvrisk::tree::{density_ratio, weight_transport, AdaptedVector, MeasureVector, ScenarioTree, TerminalClaim};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Absolute deviation allowed in floating-point mode.
const F64_TOL: f64 = 1e-8;

struct Fixture<S> {
    name: String,
    system: AcceptanceSystem<S>,
    solvency: Option<SolvencyProcess<S>>,
    coherent: bool,
}

#[derive(Clone, Copy, PartialEq)]
enum Family {
    Conic,
    Convex,
    Avar,
}

/// How many of the `d` assets are eligible in a generated fixture.
#[derive(Clone, Copy, PartialEq)]
enum Eligible {
    Any,
    All,
    Some,
}

fn make_fixture<S: Scalar>(rng: &mut ChaCha8Rng, family: Family, eligible: Eligible, max_horizon: usize, max_branch: usize, name: String) -> Fixture<S> {
    let d = rng.gen_range(2..=3);
    let m = match eligible {
        _ if family == Family::Avar => d,
        Eligible::All => d,
        Eligible::Some => rng.gen_range(1..d),
        Eligible::Any => rng.gen_range(1..=d),
    };
    let tree: ScenarioTree<S> = random_tree(rng, max_horizon, max_branch, d, m);
    match family {
        Family::Conic | Family::Convex => {
            let solvency = random_market(&tree, rng, family == Family::Conic);
            let system = superhedging_system(&tree, &solvency).expect("random market is free of arbitrage");
            Fixture { name, system, solvency: Some(solvency), coherent: family == Family::Conic }
        }
        Family::Avar => {
            let levels = random_avar_levels(&tree, rng);
            let system = composed_avar_system(&tree, &levels).expect("random levels are valid");
            Fixture { name, system, solvency: None, coherent: true }
        }
    }
}

fn battery<S: Scalar>(seed: u64, count: usize, max_horizon: usize, max_branch: usize) -> Vec<Fixture<S>> {
    mixed_battery(seed, count, &[(Family::Conic, Eligible::Any), (Family::Convex, Eligible::Any), (Family::Avar, Eligible::All)], max_horizon, max_branch)
}

fn mixed_battery<S: Scalar>(seed: u64, count: usize, kinds: &[(Family, Eligible)], max_horizon: usize, max_branch: usize) -> Vec<Fixture<S>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|k| {
            let (family, eligible) = kinds[k % kinds.len()];
            make_fixture(&mut rng, family, eligible, max_horizon, max_branch, format!("seed{seed}#{k}"))
        })
        .collect()
}

fn close<S: Scalar>(a: &Ext<S>, b: &Ext<S>) -> bool {
    match (a, b) {
        (Ext::Finite(x), Ext::Finite(y)) if !S::is_exact() => (x.to_f64() - y.to_f64()).abs() <= F64_TOL,
        _ => a == b,
    }
}

fn le<S: Scalar>(a: &Ext<S>, b: &Ext<S>) -> bool {
    match (a, b) {
        (Ext::Finite(x), Ext::Finite(y)) if !S::is_exact() => x.to_f64() <= y.to_f64() + F64_TOL,
        _ => a <= b,
    }
}

/// A weight field at time `t` plus per-node flags telling whether the weight
/// is known to lie in the dual of the acceptance set.
fn probe_weight<S: Scalar>(system: &AcceptanceSystem<S>, t: usize, rng: &mut ChaCha8Rng) -> (AdaptedVector<S>, Vec<bool>) {
    let tree = system.tree();
    let mut w = random_weight(tree, t, rng);
    let mut valid = vec![false; tree.nodes_at(t).len()];
    if t < tree.horizon() {
        let x = random_claim(tree, rng);
        for (pos, (value, wn)) in maximizing_weight(system, t, t + 1, &x).unwrap().into_iter().enumerate() {
            if let (true, Some(wn)) = (value.is_finite(), wn) {
                w.values[pos] = wn;
                valid[pos] = true;
            }
        }
    } else if t > 0 {
        let (prev, prev_valid) = probe_weight(system, t - 1, rng);
        let x = random_claim(tree, rng);
        let next = recursion_rhs(system, t - 1, t, &prev, &x, true).unwrap().next_weights(tree);
        for (pos, &nu) in tree.nodes_at(t).iter().enumerate() {
            let parent = tree.ancestor_at(nu, t - 1);
            let wn = &next.values[pos];
            if prev_valid[tree.node(parent).layer_pos] && wn[..tree.m()].iter().any(|c| !c.is_zero_tol()) {
                w.values[pos] = wn.clone();
                valid[pos] = true;
            }
        }
    }
    (w, valid)
}

struct Tally {
    checks: usize,
    failures: Vec<String>,
}

impl Tally {
    fn new() -> Self {
        Tally { checks: 0, failures: Vec::new() }
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok && self.failures.len() < 10 {
            self.failures.push(what());
        } else if !ok {
            self.failures.push(String::new());
        }
    }

    fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    fn summary(&self) -> String {
        if self.passed() {
            format!("{} checks", self.checks)
        } else {
            let shown: Vec<&str> = self.failures.iter().filter(|s| !s.is_empty()).map(|s| s.as_str()).take(3).collect();
            format!("{} of {} checks failed: {}", self.failures.len(), self.checks, shown.join("; "))
        }
    }
}

fn mix<S: Scalar>(tree: &ScenarioTree<S>, t: usize, lambda: &[S], x: &TerminalClaim<S>, y: &TerminalClaim<S>) -> TerminalClaim<S> {
    let mut out = x.clone();
    for (k, &leaf) in tree.leaves().iter().enumerate() {
        let l = lambda[tree.node(tree.ancestor_at(leaf, t)).layer_pos].clone();
        for i in 0..tree.d() {
            out.values[k][i] = l.clone() * x.values[k][i].clone() + (S::one() - l.clone()) * y.values[k][i].clone();
        }
    }
    out
}

fn axioms_on<S: Scalar>(fx: &Fixture<S>, rng: &mut ChaCha8Rng, tally: &mut Tally) {
    let system = &fx.system;
    let tree = system.tree();
    let (d, m) = (tree.d(), tree.m());
    for t in 0..=tree.horizon() {
        for _ in 0..2 {
            let (w, valid) = probe_weight(system, t, rng);
            let x = random_claim(tree, rng);
            let rho = |c: &TerminalClaim<S>| system.scalarize_lax(t, &w, c).unwrap().values();
            let rx = rho(&x);
            let name = &fx.name;

            let mut bump = x.clone();
            for v in bump.values.iter_mut() {
                for c in v.iter_mut() {
                    *c = c.clone() + S::ratio(rng.gen_range(0..=4), 2);
                }
            }
            let ry = rho(&bump);
            for (pos, (a, b)) in ry.iter().zip(&rx).enumerate() {
                tally.check(le(a, b), || format!("{name} t={t} node {pos}: monotonicity {a} > {b}"));
            }

            let mut u = AdaptedVector::zeros(tree, t);
            for v in u.values.iter_mut() {
                for c in v[..m].iter_mut() {
                    *c = S::ratio(rng.gen_range(-4..=4), 2);
                }
            }
            let shifted = rho(&x.shift(tree, &u));
            for (pos, (a, b)) in shifted.iter().zip(&rx).enumerate() {
                let wn = system.space().canonicalize(&w.values[pos]);
                let dot = (0..d).fold(S::zero(), |acc, i| acc + wn[i].clone() * u.values[pos][i].clone());
                let expected = b.try_sub(&Ext::Finite(dot)).unwrap();
                tally.check(close(a, &expected), || format!("{name} t={t} node {pos}: translativity {a} vs {expected}"));
            }

            let y = random_claim(tree, rng);
            let ryy = rho(&y);
            let lambda: Vec<S> = (0..tree.nodes_at(t).len()).map(|_| S::ratio(rng.gen_range(0..=4), 4)).collect();
            let rz = rho(&mix(tree, t, &lambda, &x, &y));
            for pos in 0..rz.len() {
                let l = &lambda[pos];
                let bound = rx[pos].scale(l).try_add(&ryy[pos].scale(&(S::one() - l.clone())));
                if let Ok(bound) = bound {
                    let a = &rz[pos];
                    tally.check(le(a, &bound), || format!("{name} t={t} node {pos}: convexity {a} > {bound}"));
                }
            }

            let zero = rho(&TerminalClaim::zeros(tree));
            for (pos, z) in zero.iter().enumerate() {
                if fx.coherent {
                    let ok = if valid[pos] { close(z, &Ext::zero()) } else { close(z, &Ext::zero()) || *z == Ext::NegInf };
                    tally.check(ok, || format!("{name} t={t} node {pos}: normalization gives {z}"));
                } else {
                    tally.check(le(z, &Ext::zero()), || format!("{name} t={t} node {pos}: rho(0) = {z} > 0"));
                }
            }

            if fx.coherent {
                let c = S::ratio(rng.gen_range(1..=6), 2);
                let scaled = rho(&x.scale(&c));
                for (pos, (a, b)) in scaled.iter().zip(&rx).enumerate() {
                    let expected = b.scale(&c);
                    tally.check(close(a, &expected), || format!("{name} t={t} node {pos}: homogeneity {a} vs {expected}"));
                }
            }
        }
    }
}

fn criterion_1() -> (bool, String) {
    let mut tally = Tally::new();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for fx in battery::<Rational>(1, 50, 2, 2) {
        axioms_on(&fx, &mut rng, &mut tally);
    }
    for fx in battery::<f64>(2, 50, 2, 3) {
        axioms_on(&fx, &mut rng, &mut tally);
    }
    (tally.passed(), format!("axioms on 50 exact and 50 floating fixtures, {}", tally.summary()))
}

fn criterion_2() -> (bool, String) {
    let mut tally = Tally::new();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for fx in battery::<Rational>(3, 12, 2, 2) {
        let system = &fx.system;
        let tree = system.tree();
        for t in 0..tree.horizon() {
            let (w, valid) = probe_weight(system, t, &mut rng);
            if !valid.iter().all(|v| *v) {
                continue;
            }
            let x = random_claim(tree, &mut rng);
            let (pair, value) = system.dual_maximizer(t, &x, &w).unwrap();
            let dual = system.dual_value(t, &x, &w, &pair).unwrap();
            for (pos, (a, b)) in dual.values.iter().zip(value.values()).enumerate() {
                tally.check(*a == b, || format!("{} t={t} node {pos}: dual {a} vs primal {b}", fx.name));
            }
        }
    }
    let mut sampled = Vec::new();
    for fx in battery::<f64>(4, 12, 2, 3) {
        let system = &fx.system;
        let tree = system.tree();
        let (w, valid) = probe_weight(system, 0, &mut rng);
        if !valid[0] {
            tally.check(false, || format!("{}: no dual weight", fx.name));
            continue;
        }
        let x = random_claim(tree, &mut rng);
        let rho = system.scalarize(0, &w, &x).unwrap().values();
        let pools = system.dual_pools(0, &w, 12, 4.0, &mut rng).unwrap();
        let mut count = 0;
        for _ in 0..3000 {
            if count == 1000 {
                break;
            }
            let Some(pair) = system.sample_pair(0, &pools, &mut rng) else { continue };
            if system.check_pair(0, &w, &pair).is_err() {
                continue;
            }
            count += 1;
            let dual = system.dual_value(0, &x, &w, &pair).unwrap();
            tally.check(le(&dual.values[0], &rho[0]), || format!("{}: weak duality {} > {}", fx.name, dual.values[0], rho[0]));
        }
        tally.check(count == 1000, || format!("{}: only {count} valid dual pairs", fx.name));
        sampled.push(count);
    }
    (tally.passed(), format!("strong duality on 12 exact fixtures, weak duality on {} sampled pairs, {}", sampled.iter().sum::<usize>(), tally.summary()))
}

fn mptc_battery() -> Vec<Fixture<Rational>> {
    let mut fixtures = vec![Fixture {
        name: "bin2".into(),
        system: bin2_superhedging(2),
        solvency: Some(bin2_market(&bin2_tree::<Rational>(2))),
        coherent: true,
    }];
    fixtures.extend(mixed_battery::<Rational>(5, 8, &[(Family::Conic, Eligible::All), (Family::Avar, Eligible::All)], 2, 2));
    fixtures
}

/// Superhedging systems that need not be multi-portfolio time consistent:
/// convex markets with every asset eligible and conic markets with some
/// asset ineligible.
fn classification_battery() -> Vec<Fixture<Rational>> {
    mixed_battery::<Rational>(7, 6, &[(Family::Convex, Eligible::All), (Family::Conic, Eligible::Some)], 2, 2)
}

fn broken_battery() -> Vec<(String, AcceptanceSystem<Rational>)> {
    let factor = Rational::ratio(11, 10);
    let tree = bin2_tree::<Rational>(2);
    let market = bin2_market(&tree);
    let mut out = vec![
        ("bin2 generators".to_string(), broken_superhedging(&tree, &market, &factor, BrokenKind::Generators).unwrap()),
        ("bin2 restricted".to_string(), broken_superhedging(&tree, &market, &factor, BrokenKind::Restricted).unwrap()),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    for k in 0..4 {
        let d = rng.gen_range(2..=3);
        let tree: ScenarioTree<Rational> = random_tree(&mut rng, 2, 2, d, d);
        let market = random_market(&tree, &mut rng, true);
        let kind = if k % 2 == 0 { BrokenKind::Generators } else { BrokenKind::Restricted };
        out.push((format!("random broken #{k}"), broken_superhedging(&tree, &market, &factor, kind).unwrap()));
    }
    out
}

fn pairs(horizon: usize) -> Vec<(usize, usize)> {
    (0..horizon).flat_map(|t| (t + 1..=horizon).map(move |s| (t, s))).collect()
}

/// Whether some probe at `(t, s)` has a non-zero recursion gap, and the number of probes.
fn recursion_detects(system: &AcceptanceSystem<Rational>, t: usize, s: usize, seed: u64, rng: &mut ChaCha8Rng) -> (bool, usize) {
    let mut probes = recursion_probes(system, t, s, 20, 10, seed).unwrap();
    for _ in 0..20 {
        let (w, _) = probe_weight(system, t, rng);
        probes.push((w, random_claim(system.tree(), rng)));
    }
    let mut nonzero = false;
    for (w, x) in &probes {
        let gaps = recursion_gap(system, t, s, w, x).unwrap();
        nonzero |= gaps.iter().any(|g| *g != Ext::zero());
    }
    (nonzero, probes.len())
}

fn criterion_3() -> (bool, String) {
    let mut tally = Tally::new();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut probes = 0;
    for fx in mptc_battery() {
        let system = &fx.system;
        for (t, s) in pairs(system.tree().horizon()) {
            let report = check_acceptance_decomposition(system, t, s, DecompositionMode::Exact, 64, 7).unwrap();
            let (nonzero, count) = recursion_detects(system, t, s, 11, &mut rng);
            probes += count;
            tally.check(report.verdict == Verdict::Holds, || format!("{} ({t},{s}): decomposition {:?}", fx.name, report.verdict));
            tally.check(!nonzero, || format!("{} ({t},{s}): non-zero recursion gap", fx.name));
        }
    }
    let mut broken_pairs = 0;
    let broken = broken_battery();
    for (name, system) in &broken {
        let mut flagged = false;
        for (t, s) in pairs(system.tree().horizon()) {
            let report = check_acceptance_decomposition(system, t, s, DecompositionMode::Exact, 64, 7).unwrap();
            let (nonzero, _) = recursion_detects(system, t, s, 11, &mut rng);
            let violated = report.verdict == Verdict::Violated;
            flagged |= violated && nonzero;
            broken_pairs += 1;
            tally.check(violated == nonzero, || format!("{name} ({t},{s}): detectors disagree, check {:?}, gap {nonzero}", report.verdict));
        }
        tally.check(flagged, || format!("{name}: not flagged by both detectors"));
    }
    let (mut classified, mut holds, mut violated_pairs) = (0, 0, 0);
    for fx in classification_battery() {
        let system = &fx.system;
        for (t, s) in pairs(system.tree().horizon()) {
            let report = check_acceptance_decomposition(system, t, s, DecompositionMode::Exact, 64, 7).unwrap();
            let (nonzero, _) = recursion_detects(system, t, s, 11, &mut rng);
            let violated = report.verdict == Verdict::Violated;
            classified += 1;
            holds += (report.verdict == Verdict::Holds) as usize;
            violated_pairs += violated as usize;
            tally.check(violated == nonzero, || format!("{} ({t},{s}): detectors disagree, check {:?}, gap {nonzero}", fx.name, report.verdict));
            tally.check(violated || report.verdict == Verdict::Holds, || format!("{} ({t},{s}): check {:?}", fx.name, report.verdict));
        }
    }
    (
        tally.passed(),
        format!(
            "{probes} recursion probes on MPTC fixtures, {} broken fixtures over {broken_pairs} pairs, {classified} classified pairs ({holds} hold, {violated_pairs} violated), {}",
            broken.len(),
            tally.summary()
        ),
    )
}

fn criterion_4() -> (bool, String) {
    let mut tally = Tally::new();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for fx in mptc_battery() {
        let system = &fx.system;
        let tree = system.tree();
        for _ in 0..3 {
            let (w0, valid) = probe_weight(system, 0, &mut rng);
            if !valid[0] {
                continue;
            }
            let x = random_claim(tree, &mut rng);
            let ms = moving_scalarization(system, &x, &w0).unwrap();
            tally.check(ms.telescopes(), || format!("{}: chain {} vs rho {}", fx.name, ms.chain[0][0], ms.rho[0][0]));
            tally.check(ms.transport_consistent, || format!("{}: weights are not transported", fx.name));
            for t in 0..tree.horizon() {
                tally.check(ms.chain[t] == ms.rho[t], || format!("{}: chain differs from rho at time {t}", fx.name));
                tally.check(ms.step_values[t] == ms.rho[t], || format!("{}: step value differs from rho at time {t}", fx.name));
            }
        }
    }
    let tree = bin1_tree::<Rational>();
    let system = superhedging_system(&tree, &frictionless(&tree)).unwrap();
    let x = bin1_claim(&tree);
    let w = AdaptedVector::constant(&tree, 0, &[Rational::one(), Rational::one()]);
    let value = system.scalarize(0, &w, &x).unwrap().values()[0].clone();
    tally.check(value == Ext::Finite(Rational::one()), || format!("bin1 value {value}"));
    let ms = moving_scalarization(&system, &x, &w).unwrap();
    tally.check(ms.chain[0][0] == Ext::Finite(Rational::one()), || format!("bin1 chain {}", ms.chain[0][0]));
    (tally.passed(), format!("moving scalarization telescopes, bin1 value {value}, {}", tally.summary()))
}

/// `min u` subject to `X + u·e₁ = Σ_{ν ⪯ ω, time(ν) ≥ t} Σ_g λ_{ν,g} g` on the
/// subtree of `n`, with one variable per generator of every solvency cone.
fn brute_force_superhedge(tree: &ScenarioTree<Rational>, solvency: &SolvencyProcess<Rational>, n: usize, x: &TerminalClaim<Rational>) -> Ext<Rational> {
    let d = tree.d();
    let mut lp = LinearProgram::new(Sense::Minimize);
    let u = lp.add_free(Rational::one());
    let mut trades: Vec<(usize, Vec<usize>)> = Vec::new();
    for nu in 0..tree.len() {
        if tree.time(nu) >= tree.time(n) && tree.is_descendant(nu, n) {
            let vars = solvency.regions[nu].generators().iter().map(|_| lp.add_nonneg(Rational::zero())).collect();
            trades.push((nu, vars));
        }
    }
    for k in tree.leaf_range(n) {
        let leaf = tree.leaves()[k];
        for i in 0..d {
            let mut row = Vec::new();
            if i == 0 {
                row.push((u, Rational::one()));
            }
            for (nu, vars) in &trades {
                if !tree.is_descendant(leaf, *nu) {
                    continue;
                }
                for (g, &v) in solvency.regions[*nu].generators().iter().zip(vars) {
                    if g[i] != Rational::zero() {
                        row.push((v, -g[i].clone()));
                    }
                }
            }
            lp.add_constraint(row, Relation::Eq, -x.values[k][i].clone());
        }
    }
    let out = solve_lp(&lp).unwrap();
    match out.status {
        LpStatus::Optimal => Ext::Finite(out.value.unwrap()),
        LpStatus::Infeasible => Ext::PosInf,
        LpStatus::Unbounded => Ext::NegInf,
    }
}

/// Frozen root gap of the naive one-asset recursion for `bin2_claim.json`.
fn frozen_naive_gap() -> Rational {
    Rational::ratio(-1, 10)
}

fn criterion_5() -> (bool, String) {
    let mut tally = Tally::new();
    let tree = bin2_tree::<Rational>(1);
    let market = bin2_market(&tree);
    let system = superhedging_system(&tree, &market).unwrap();
    let h = |v: &str| Rational::parse(v).unwrap();
    let x = TerminalClaim::new(
        &tree,
        vec![vec![h("1"), h("-2.5")], vec![h("-1"), h("-2.5")], vec![h("0.5"), h("2")], vec![h("-2"), h("-1.5")]],
    )
    .unwrap();
    let gap = naive_recursion_gap(&system, 0, 1, &x).unwrap()[0].clone();

    let root = tree.root();
    let rho0 = brute_force_superhedge(&tree, &market, root, &x);
    let mut z = TerminalClaim::zeros(&tree);
    for &nu in tree.nodes_at(1) {
        let value = brute_force_superhedge(&tree, &market, nu, &x).into_finite().expect("finite superhedging price");
        for k in tree.leaf_range(nu) {
            z.values[k][0] = -value.clone();
        }
    }
    let oracle = rho0.try_sub(&brute_force_superhedge(&tree, &market, root, &z)).unwrap();
    tally.check(gap == oracle, || format!("naive gap {gap} vs oracle {oracle}"));
    tally.check(gap == Ext::Finite(frozen_naive_gap()), || format!("naive gap {gap} vs frozen {}", frozen_naive_gap()));
    tally.check(gap != Ext::zero(), || "naive gap is zero".into());

    let full = bin2_superhedging::<Rational>(2);
    let tree2 = full.tree();
    let x2 = TerminalClaim { values: x.values.clone() };
    let w = AdaptedVector::constant(tree2, 0, &[Rational::one(), Rational::one()]);
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let (w_max, _) = probe_weight(&full, 0, &mut rng);
    for weight in [&w, &w_max] {
        let g = recursion_gap(&full, 0, 1, weight, &x2).unwrap();
        tally.check(g.iter().all(|v| *v == Ext::zero()), || format!("recursion gap {:?} with all assets eligible", g));
        if full.zero_dual_check(0, weight).unwrap()[0] {
            let ms = moving_scalarization(&full, &x2, weight).unwrap();
            tally.check(ms.telescopes(), || "moving scalarization does not telescope".into());
        }
    }
    (tally.passed(), format!("naive gap {gap} (oracle {oracle}), moving recursion gap 0, {}", tally.summary()))
}

fn criterion_6() -> (bool, String) {
    let mut tally = Tally::new();
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut valid = 0;
    let mut finite = 0;
    let mptc = mptc_battery();
    for fx in mptc.iter().take(5) {
        let system = &fx.system;
        let tree = system.tree();
        let all = pairs(tree.horizon());
        let per = 500 / all.len() + 1;
        for (k, &(t, s)) in all.iter().enumerate() {
            let (w, _) = probe_weight(system, t, &mut rng);
            let quads = sample_quadruples(system, t, s, &w, per, per / 2, 900 + k as u64).unwrap();
            for quad in quads {
                let Ok(dirs) = check_quadruple(system, t, s, &w, &quad) else { continue };
                valid += 1;
                finite += dirs.finite_beta as usize;
                for (pos, v) in cocycle_check(system, t, s, &w, &quad).unwrap().iter().enumerate() {
                    tally.check(v.equality(), || format!("{} ({t},{s}) node {pos}: beta {} vs split {}", fx.name, v.beta, v.split));
                }
            }
        }
    }
    tally.check(valid >= 500 * 5, || format!("only {valid} valid quadruples"));
    let mut violations = Vec::new();
    for (name, system) in broken_battery() {
        let mut found = 0;
        for (t, s) in pairs(system.tree().horizon()) {
            for (w, x) in recursion_probes(&system, t, s, 10, usize::MAX, 13).unwrap() {
                let Some(quad) = quadruple_from_recursion(&system, t, s, &w, &x).unwrap() else { continue };
                if check_quadruple(&system, t, s, &w, &quad).is_err() {
                    continue;
                }
                found += cocycle_check(&system, t, s, &w, &quad).unwrap().iter().filter(|v| !v.le).count();
            }
        }
        tally.check(found > 0, || format!("{name}: no cocycle violation"));
        violations.push(found);
    }
    (
        tally.passed(),
        format!("{valid} valid quadruples ({finite} with finite beta) satisfy the cocycle, broken violations {violations:?}, {}", tally.summary()),
    )
}

/// `AV@R_λ(X) = −(1/λ) ∫_0^λ q_X(u) du` by sorting outcomes.
fn avar_oracle(outcomes: &[(Rational, Rational)], lambda: &Rational) -> Rational {
    let mut sorted = outcomes.to_vec();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let mut left = lambda.clone();
    let mut acc = Rational::zero();
    for (x, p) in sorted {
        if left <= Rational::zero() {
            break;
        }
        let take = if p < left { p } else { left.clone() };
        acc = acc + take.clone() * x;
        left = left - take;
    }
    -acc / lambda.clone()
}

/// Nested AV@R per component: `V_T = X_i`, `V_t(n) = −AV@R^{λ_i(n)}(V_{t+1} | n)`.
fn nested_avar(tree: &ScenarioTree<Rational>, levels: &AvarLevels<Rational>, x: &TerminalClaim<Rational>, i: usize) -> Rational {
    let mut value = vec![Rational::zero(); tree.len()];
    for (k, &leaf) in tree.leaves().iter().enumerate() {
        value[leaf] = x.values[k][i].clone();
    }
    for t in (0..tree.horizon()).rev() {
        for &n in tree.nodes_at(t) {
            let outcomes: Vec<_> = tree.descendants_at(n, t + 1).iter().map(|&nu| (value[nu].clone(), tree.cond_prob(nu, n))).collect();
            let lambda = levels.lambda[n].as_ref().unwrap()[i].clone();
            value[n] = -avar_oracle(&outcomes, &lambda);
        }
    }
    -value[tree.root()].clone()
}

fn criterion_7() -> (bool, String) {
    let mut tally = Tally::new();
    let tree = bin1_tree::<Rational>();
    let levels = AvarLevels::constant(&tree, &[Rational::ratio(1, 2), Rational::ratio(1, 2)]);
    let system = composed_avar_system(&tree, &levels).unwrap();
    let x = bin1_claim(&tree);
    let w = AdaptedVector::constant(&tree, 0, &[Rational::one(), Rational::one()]);
    let hand = system.scalarize(0, &w, &x).unwrap().values()[0].clone();
    tally.check(hand == Ext::Finite(Rational::from_i64(2)), || format!("one-period value {hand}"));

    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut checked = 0;
    for k in 0..20 {
        let d = rng.gen_range(1..=3);
        let horizon = if k < 10 { 1 } else { 2 };
        let tree: ScenarioTree<Rational> = random_tree(&mut rng, horizon, 3, d, d);
        let levels = random_avar_levels(&tree, &mut rng);
        let system = composed_avar_system(&tree, &levels).unwrap();
        let x = random_claim(&tree, &mut rng);
        let wv: Vec<Rational> = (0..d).map(|_| Rational::from_i64(rng.gen_range(1..=3))).collect();
        let w = AdaptedVector::constant(&tree, 0, &wv);
        let expected = (0..d).fold(Rational::zero(), |acc, i| acc + wv[i].clone() * nested_avar(&tree, &levels, &x, i));
        let (pair, value) = system.dual_maximizer(0, &x, &w).unwrap();
        let value = value.values()[0].clone();
        tally.check(value == Ext::Finite(expected.clone()), || format!("fixture {k}: value {value} vs oracle {expected}"));
        for t in 0..tree.horizon() {
            let xi = density_ratio(&tree, &pair.q, t, t + 1);
            for &n in tree.nodes_at(t) {
                let lambda = levels.lambda[n].as_ref().unwrap();
                for &nu in tree.descendants_at(n, t + 1) {
                    for i in 0..d {
                        let r = &xi.values[tree.node(nu).layer_pos][i];
                        let bound = Rational::one() / lambda[i].clone();
                        checked += 1;
                        tally.check(*r <= bound, || format!("fixture {k}: density {r} above {bound} at node {}", tree.id(nu)));
                    }
                }
            }
        }
    }
    (tally.passed(), format!("one-period value {hand}, 20 oracle fixtures, {checked} density bounds, {}", tally.summary()))
}

fn dual_cone_test(system: &AcceptanceSystem<Rational>, solvency: &SolvencyProcess<Rational>, t: usize, n: usize, q: &MeasureVector<Rational>, v: &AdaptedVector<Rational>) -> bool {
    let tree = system.tree();
    (t..=tree.horizon()).all(|s| {
        let moved = weight_transport(tree, q, v, s);
        tree.descendants_at(n, s).iter().all(|&nu| {
            let wn = moved.at(tree, nu);
            solvency.regions[nu]
                .generators()
                .iter()
                .all(|g| g.iter().zip(wn).fold(Rational::zero(), |acc, (a, b)| acc + a.clone() * b.clone()) >= Rational::zero())
        })
    })
}

fn criterion_8() -> (bool, String) {
    let mut tally = Tally::new();
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut fixtures: Vec<Fixture<Rational>> = mptc_battery().into_iter().filter(|f| f.solvency.is_some()).collect();
    fixtures.extend(battery::<Rational>(9, 6, 2, 2).into_iter().filter(|f| f.solvency.is_some()));
    let (mut zeros, mut infinite, mut convex_checks) = (0, 0, 0);
    for fx in &fixtures {
        let system = &fx.system;
        let solvency = fx.solvency.as_ref().unwrap();
        let tree = system.tree();
        let d = tree.d();
        let mut directions = Vec::new();
        let (w, valid) = probe_weight(system, 0, &mut rng);
        if valid[0] {
            let pools = system.dual_pools(0, &w, 8, Rational::from_i64(4), &mut rng).unwrap();
            for _ in 0..100 {
                if let Some(pair) = system.sample_pair(0, &pools, &mut rng) {
                    if let Ok(total) = system.check_pair(0, &w, &pair) {
                        directions.push((pair.q, total));
                    }
                }
            }
        }
        while directions.len() < 200 {
            let q = random_measure(tree, &mut rng);
            let v = AdaptedVector {
                time: 0,
                values: vec![(0..d).map(|_| Rational::from_i64(rng.gen_range(0..=4))).collect()],
            };
            directions.push((q, v));
        }
        for (q, v) in &directions {
            let alpha = system.penalty_alpha(0, None, q, v).unwrap().values[0].clone();
            let mut sigma = Ext::zero();
            for s in 0..=tree.horizon() {
                let moved = weight_transport(tree, q, v, s);
                let term = market_penalty_sigma(tree, solvency, 0, &moved).unwrap().values[0].clone();
                sigma = sigma.try_add(&term).unwrap();
            }
            tally.check(alpha == sigma.neg(), || format!("{}: alpha {alpha} vs -sum sigma {}", fx.name, sigma.neg()));
            if fx.coherent {
                let dual = dual_cone_test(system, solvency, 0, tree.root(), q, v);
                let expected = if dual { Ext::zero() } else { Ext::PosInf };
                tally.check(alpha == expected, || format!("{}: alpha {alpha}, dual-cone test {dual}", fx.name));
                if dual {
                    zeros += 1;
                } else {
                    infinite += 1;
                }
            } else {
                convex_checks += 1;
            }
        }
    }
    tally.check(zeros > 0 && infinite > 0, || format!("penalty outcomes not both seen: {zeros} zero, {infinite} infinite"));
    (
        tally.passed(),
        format!("cone penalties {zeros} zero and {infinite} infinite, {convex_checks} convex sigma identities, {}", tally.summary()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> (bool, String)); 8] = [
        ("axioms", criterion_1),
        ("duality", criterion_2),
        ("recursion and MPTC detection", criterion_3),
        ("moving scalarization", criterion_4),
        ("single eligible asset", criterion_5),
        ("cocycle", criterion_6),
        ("composed AV@R", criterion_7),
        ("superhedging penalty", criterion_8),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let label = format!("criterion {} ({name})", k + 1);
        if !filter.is_empty() && !filter.iter().any(|f| label.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let (ok, detail) = match catch_unwind(AssertUnwindSafe(run)) {
            Ok(r) => r,
            Err(e) => {
                let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
                (false, format!("panicked: {}", msg.unwrap_or_default()))
            }
        };
        failed += !ok as usize;
        println!("{} {label}: {detail} [{:.1}s]", if ok { "PASS" } else { "FAIL" }, start.elapsed().as_secs_f64());
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
