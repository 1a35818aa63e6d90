//! First-order optimality measures in a problem's declared scaling.

use super::NlpProblem;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    /// Largest scaled violation over equalities, inequality bounds and
    /// variable bounds.
    pub feas: f64,
    /// Infinity norm of the projected scaled Lagrangian gradient,
    /// including the complementarity of inequality multipliers.
    pub stat: f64,
}

fn interval_violation(v: f64, lo: f64, hi: f64) -> f64 {
    if v < lo {
        lo - v
    } else if v > hi {
        v - hi
    } else {
        0.0
    }
}

/// Feasibility and stationarity of `(x, multipliers)` for the Lagrangian
/// `f - λᵀc`.
///
/// Inequality multipliers follow the slack convention: nonnegative when the
/// lower bound is active, nonpositive at the upper bound, zero in between.
pub fn kkt_residuals<P: NlpProblem + ?Sized>(
    problem: &P,
    x: &[f64],
    multipliers: &[f64],
) -> KktResiduals {
    let n = problem.n_vars();
    let n_eq = problem.n_eq();
    let m = n_eq + problem.n_ineq();
    assert_eq!(x.len(), n, "x has wrong dimension");
    assert_eq!(
        multipliers.len(),
        m,
        "multiplier vector has wrong dimension"
    );
    let dx = problem.variable_scales();
    let sc = problem.constraint_scales();
    let so = problem.objective_scale();
    let (xl, xu) = problem.variable_bounds();
    let (il, iu) = problem.inequality_bounds();

    let mut c = vec![0.0; m];
    problem.constraints(x, &mut c);
    let mut feas = 0.0f64;
    for r in 0..n_eq {
        feas = feas.max(c[r].abs() / sc[r]);
    }
    for r in n_eq..m {
        let k = r - n_eq;
        feas = feas.max(interval_violation(c[r], il[k], iu[k]) / sc[r]);
    }
    for j in 0..n {
        feas = feas.max(interval_violation(x[j], xl[j], xu[j]) / dx[j]);
    }

    let mut g = vec![0.0; n];
    problem.gradient(x, &mut g);
    let structure = problem.jacobian_structure();
    let mut vals = vec![0.0; structure.len()];
    problem.jacobian_values(x, &mut vals);
    for (k, (r, col)) in structure.iter().enumerate() {
        g[*col] -= vals[k] * multipliers[*r];
    }
    let mut stat = 0.0f64;
    for j in 0..n {
        let (lo, hi) = (xl[j] / dx[j], xu[j] / dx[j]);
        let xi = (x[j] / dx[j]).clamp(lo, hi);
        let gs = so * dx[j] * g[j];
        stat = stat.max(((xi - gs).clamp(lo, hi) - xi).abs());
    }
    for r in n_eq..m {
        let k = r - n_eq;
        let (lo, hi) = (il[k] / sc[r], iu[k] / sc[r]);
        let sigma = (c[r] / sc[r]).clamp(lo, hi);
        let lam = multipliers[r] * so * sc[r];
        stat = stat.max(((sigma - lam).clamp(lo, hi) - sigma).abs());
    }
    KktResiduals { feas, stat }
}
