//! One asset, one period, and a solvency region `[−3/10, ∞)` at every node.
//! Superhedging then accepts a shortfall of `3/5` at time 0 and `3/10` at the
//! leaves, while the sum of the stepped set and the leaf sets accepts `9/10`.
//! So the superhedging system with shortfall points is not multi-portfolio
//! time consistent, and both detectors must say so.

use mvrisk::markets::{superhedging_system, Region, SolvencyProcess};
use mvrisk::riskcore::AcceptanceSystem;
use mvrisk::scalar::{Ext, Rational, Scalar};
use mvrisk::timeconsistency::{check_acceptance_decomposition, recursion_gap, recursion_rhs, DecompositionMode, Verdict};
use mvrisk::tree::{uniform_branching, AdaptedVector, TerminalClaim};

fn q(n: i64, d: i64) -> Rational {
    Rational::ratio(n, d)
}

fn system() -> AcceptanceSystem<Rational> {
    let tree = uniform_branching::<Rational>(1, 1, &[vec![q(1, 2), q(1, 2)]]);
    let region = Region::Convex { generators: vec![vec![q(1, 1)]], points: vec![vec![q(-3, 10)]] };
    superhedging_system(&tree, &SolvencyProcess::constant(&tree, region)).unwrap()
}

#[test]
fn recursion_gap_is_three_tenths() {
    let system = system();
    let tree = system.tree();
    let w = AdaptedVector::constant(tree, 0, &[q(1, 1)]);
    let x = TerminalClaim::zeros(tree);
    let rho = system.scalarize(0, &w, &x).unwrap().values()[0].clone();
    assert_eq!(rho, Ext::Finite(q(-3, 5)));
    let rhs = recursion_rhs(&system, 0, 1, &w, &x, true).unwrap().values()[0].clone();
    assert_eq!(rhs, Ext::Finite(q(-9, 10)));
    assert_eq!(recursion_gap(&system, 0, 1, &w, &x).unwrap(), vec![Ext::Finite(q(3, 10))]);
}

#[test]
fn leaf_risk_is_the_local_shortfall() {
    let system = system();
    let tree = system.tree();
    let w = AdaptedVector::constant(tree, 1, &[q(1, 1)]);
    let values = system.scalarize(1, &w, &TerminalClaim::zeros(tree)).unwrap().values();
    assert_eq!(values, vec![Ext::Finite(q(-3, 10)); 2]);
}

#[test]
fn decomposition_check_reports_violation() {
    let system = system();
    for mode in [DecompositionMode::Exact, DecompositionMode::Sampled] {
        let report = check_acceptance_decomposition(&system, 0, 1, mode, 16, 3).unwrap();
        assert_eq!(report.verdict, Verdict::Violated, "{mode:?}");
    }
}
