//! Augmented Lagrangian solver against problems with known optima.

mod common;

use common::{oracle_problems, Oracle};
use orbtrack::solver::{kkt_residuals, solve, NlpProblem, OuterLog, SolveStatus, SolverOptions};

fn tight() -> SolverOptions {
    SolverOptions {
        tol_feas: 1e-9,
        tol_stat: 1e-9,
        ..SolverOptions::default()
    }
}

fn check(o: &Oracle) {
    let sol = solve(&o.problem, &o.x0, &tight(), None).unwrap();
    assert_eq!(
        sol.report.status,
        SolveStatus::OptimalLocal,
        "{}: {:?}",
        o.name,
        sol.report
    );
    for (k, (got, want)) in sol.x.iter().zip(&o.x_star).enumerate() {
        assert!(
            (got - want).abs() <= 1e-5,
            "{}: x[{k}] = {got}, expected {want}",
            o.name
        );
    }
    assert!(
        (sol.report.objective - o.f_star).abs() <= 1e-5 * (1.0 + o.f_star.abs()),
        "{}: f = {}, expected {}",
        o.name,
        sol.report.objective,
        o.f_star
    );
    let k = kkt_residuals(&o.problem, &sol.x, &sol.multipliers);
    assert!(k.feas <= 1e-8, "{}: {k:?}", o.name);
}

#[test]
fn every_oracle_problem_is_solved() {
    let all = oracle_problems();
    assert!(all.len() >= 5);
    for o in &all {
        check(o);
    }
}

#[test]
fn both_inner_solvers_are_exercised() {
    let all = oracle_problems();
    let with_hessian = all
        .iter()
        .filter(|o| !o.problem.hessian_structure().is_empty())
        .count();
    assert!(with_hessian >= 2);
    assert!(all.len() - with_hessian >= 2);
}

#[test]
fn default_tolerances_are_close_enough() {
    for o in oracle_problems() {
        let sol = solve(&o.problem, &o.x0, &SolverOptions::default(), None).unwrap();
        assert_eq!(sol.report.status, SolveStatus::OptimalLocal, "{}", o.name);
        for (got, want) in sol.x.iter().zip(&o.x_star) {
            assert!((got - want).abs() <= 1e-3, "{}: {got} vs {want}", o.name);
        }
    }
}

#[test]
fn repeated_solves_log_identically() {
    for o in oracle_problems() {
        let mut first = Vec::new();
        let mut second = Vec::new();
        let a = solve(&o.problem, &o.x0, &tight(), Some(&mut first)).unwrap();
        let b = solve(&o.problem, &o.x0, &tight(), Some(&mut second)).unwrap();
        assert!(!first.is_empty(), "{}", o.name);
        assert_eq!(first, second, "{}", o.name);
        assert_eq!(a.x, b.x, "{}", o.name);
        let text = String::from_utf8(first).unwrap();
        assert!(text.lines().all(|l| OuterLog::parse(l).is_some()));
    }
}

#[test]
fn iteration_cap_is_reported() {
    let o = &oracle_problems()[6];
    let opts = SolverOptions {
        max_outer: 1,
        ..tight()
    };
    let sol = solve(&o.problem, &o.x0, &opts, None).unwrap();
    assert_eq!(sol.report.status, SolveStatus::MaxIter);
    assert_eq!(sol.report.outer_iters, 1);
}
