//! Deterministic augmented-Lagrangian NLP solver.
//!
//! Problems expose `c_E(x) = 0`, `lo_I <= c_I(x) <= hi_I`, a variable box and
//! a sparse first-derivative oracle. Each inequality gets a bounded slack
//! `s` with `c_I(x) - s = 0`, and the outer loop minimizes
//!
//! ```text
//! L(x, s) = f(x) - λᵀc(x, s) + (ρ/2) |c(x, s)|²
//! ```
//!
//! over the box, followed by the first-order multiplier update
//! `λ ← λ - ρ c`. Problems that provide the Hessian of the Lagrangian get a
//! projected Newton inner solver on a sparse factorization; the rest fall
//! back to projected limited-memory BFGS.
//!
//! All work happens in the problem's declared scaling: variable `j` is
//! divided by `variable_scales()[j]`, constraint row `r` by
//! `constraint_scales()[r]`, and the objective multiplied by
//! `objective_scale()`. Tolerances and the reported residuals refer to
//! those scaled quantities; problems that declare no scaling see plain
//! units.

mod inner;
mod kkt;
mod newton;
mod sparse;

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use kkt::{kkt_residuals, KktResiduals};

/// Smooth nonlinear program with sparse first derivatives.
///
/// Constraint rows are ordered equalities first, then inequalities.
pub trait NlpProblem {
    fn n_vars(&self) -> usize;
    fn n_eq(&self) -> usize;
    fn n_ineq(&self) -> usize;

    /// Lower and upper variable bounds (infinite entries allowed).
    fn variable_bounds(&self) -> (Vec<f64>, Vec<f64>);

    /// Two-sided bounds for each inequality row.
    fn inequality_bounds(&self) -> (Vec<f64>, Vec<f64>);

    fn objective(&self, x: &[f64]) -> f64;

    fn gradient(&self, x: &[f64], grad: &mut [f64]);

    /// Writes all `n_eq + n_ineq` constraint values.
    fn constraints(&self, x: &[f64], out: &mut [f64]);

    /// Coordinates `(row, col)` of the structurally nonzero Jacobian
    /// entries. Must not change between calls.
    fn jacobian_structure(&self) -> Vec<(usize, usize)>;

    /// Jacobian values in the order of [`NlpProblem::jacobian_structure`].
    fn jacobian_values(&self, x: &[f64], values: &mut [f64]);

    /// Lower-triangle coordinates `(i, j)`, `i >= j`, of the Hessian of
    /// the Lagrangian. Repeated coordinates are summed. An empty structure
    /// means second derivatives are unavailable.
    fn hessian_structure(&self) -> Vec<(usize, usize)> {
        Vec::new()
    }

    /// Values of `obj_factor ∇²f(x) + Σ_r y_r ∇²c_r(x)` in the order of
    /// [`NlpProblem::hessian_structure`].
    fn hessian_values(&self, _x: &[f64], _obj_factor: f64, _y: &[f64], _values: &mut [f64]) {}

    fn variable_scales(&self) -> Vec<f64> {
        vec![1.0; self.n_vars()]
    }

    fn constraint_scales(&self) -> Vec<f64> {
        vec![1.0; self.n_eq() + self.n_ineq()]
    }

    fn objective_scale(&self) -> f64 {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol_feas: f64,
    /// Stationarity tolerance, applied as `tol_stat * (1 + |f|)`.
    pub tol_stat: f64,
    pub rho0: f64,
    pub rho_growth: f64,
    /// Required reduction factor of `|c|∞` between outer iterations before
    /// the penalty is raised.
    pub feas_decrease: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub quasi_newton_memory: usize,
    pub armijo_c: f64,
    /// Penalty ceiling; exceeding it with `|c|∞ > tol_feas` is a stall.
    pub rho_max: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol_feas: 1e-6,
            tol_stat: 1e-6,
            rho0: 10.0,
            rho_growth: 10.0,
            feas_decrease: 0.25,
            max_outer: 50,
            max_inner: 500,
            quasi_newton_memory: 10,
            armijo_c: 1e-4,
            rho_max: 1e12,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<(), SolverError> {
        let positive = [
            self.tol_feas,
            self.tol_stat,
            self.rho0,
            self.rho_growth,
            self.feas_decrease,
            self.armijo_c,
            self.rho_max,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0))
            || self.tol_feas >= 1.0
            || self.tol_stat >= 1.0
            || self.feas_decrease >= 1.0
            || self.rho_growth <= 1.0
            || self.max_outer == 0
            || self.max_inner == 0
            || self.quasi_newton_memory == 0
        {
            return Err(SolverError::BadOptions);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SolveStatus {
    OptimalLocal,
    MaxIter,
    InfeasibleStall,
    Error,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::OptimalLocal => "OPTIMAL_LOCAL",
            SolveStatus::MaxIter => "MAX_ITER",
            SolveStatus::InfeasibleStall => "INFEASIBLE_STALL",
            SolveStatus::Error => "ERROR",
        }
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    /// Unscaled objective value.
    pub objective: f64,
    pub feas_inf_norm: f64,
    pub stat_inf_norm: f64,
    pub outer_iters: usize,
    pub inner_iters: usize,
    /// Seconds.
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: Vec<f64>,
    /// Unscaled multipliers for `f - λᵀc`, one per constraint row.
    pub multipliers: Vec<f64>,
    pub report: SolveReport,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("initial point has {got} entries, problem has {expected} variables")]
    Dimension { expected: usize, got: usize },
    #[error("problem reports inconsistent sizes: {0}")]
    Inconsistent(&'static str),
    #[error("invalid solver options")]
    BadOptions,
}

/// One outer iteration as written to the log sink.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuterLog {
    pub outer: usize,
    pub inner: usize,
    pub objective: f64,
    pub feas: f64,
    pub stat: f64,
    pub rho: f64,
}

impl OuterLog {
    /// Parses a tab-separated log line.
    pub fn parse(line: &str) -> Option<OuterLog> {
        let mut it = line.split('\t');
        let outer = it.next()?.trim().parse().ok()?;
        let inner = it.next()?.trim().parse().ok()?;
        let objective = it.next()?.trim().parse().ok()?;
        let feas = it.next()?.trim().parse().ok()?;
        let stat = it.next()?.trim().parse().ok()?;
        let rho = it.next()?.trim().parse().ok()?;
        if it.next().is_some() {
            return None;
        }
        Some(OuterLog {
            outer,
            inner,
            objective,
            feas,
            stat,
            rho,
        })
    }
}

impl std::fmt::Display for OuterLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}\t{}\t{:e}\t{:e}\t{:e}\t{:e}",
            self.outer, self.inner, self.objective, self.feas, self.stat, self.rho
        )
    }
}

/// Scaled view of a problem with appended slacks, `z = [x / dx ; s / sc_I]`.
pub(crate) struct ScaledProblem<'a, P: NlpProblem + ?Sized> {
    pub problem: &'a P,
    pub n: usize,
    pub n_eq: usize,
    pub m: usize,
    pub dx: Vec<f64>,
    pub sc: Vec<f64>,
    pub so: f64,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
}

impl<'a, P: NlpProblem + ?Sized> ScaledProblem<'a, P> {
    pub fn new(problem: &'a P) -> Result<Self, SolverError> {
        let n = problem.n_vars();
        let n_eq = problem.n_eq();
        let n_ineq = problem.n_ineq();
        let m = n_eq + n_ineq;
        let dx = problem.variable_scales();
        let sc = problem.constraint_scales();
        let so = problem.objective_scale();
        if dx.len() != n || sc.len() != m {
            return Err(SolverError::Inconsistent("scale vector length"));
        }
        if dx
            .iter()
            .chain(sc.iter())
            .any(|v| !(v.is_finite() && *v > 0.0))
            || !(so.is_finite() && so > 0.0)
        {
            return Err(SolverError::Inconsistent("scales must be positive"));
        }
        let (xl, xu) = problem.variable_bounds();
        let (il, iu) = problem.inequality_bounds();
        if xl.len() != n || xu.len() != n || il.len() != n_ineq || iu.len() != n_ineq {
            return Err(SolverError::Inconsistent("bound vector length"));
        }
        let mut lo = Vec::with_capacity(n + n_ineq);
        let mut hi = Vec::with_capacity(n + n_ineq);
        for j in 0..n {
            lo.push(xl[j] / dx[j]);
            hi.push(xu[j] / dx[j]);
        }
        for r in 0..n_ineq {
            let s = sc[n_eq + r];
            lo.push(il[r] / s);
            hi.push(iu[r] / s);
        }
        if lo
            .iter()
            .zip(&hi)
            .any(|(l, h)| l > h || l.is_nan() || h.is_nan())
        {
            return Err(SolverError::Inconsistent("empty bound interval"));
        }
        let (rows, cols): (Vec<usize>, Vec<usize>) =
            problem.jacobian_structure().into_iter().unzip();
        if rows.iter().any(|r| *r >= m) || cols.iter().any(|c| *c >= n) {
            return Err(SolverError::Inconsistent("Jacobian entry out of range"));
        }
        Ok(Self {
            problem,
            n,
            n_eq,
            m,
            dx,
            sc,
            so,
            lo,
            hi,
            rows,
            cols,
        })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn unscale_x(&self, z: &[f64], x: &mut [f64]) {
        for j in 0..self.n {
            x[j] = z[j] * self.dx[j];
        }
    }
}

/// Workspace for augmented-Lagrangian evaluations.
pub(crate) struct AlEvaluator<'a, 'p, P: NlpProblem + ?Sized> {
    pub sp: &'a ScaledProblem<'p, P>,
    pub lambda: Vec<f64>,
    pub rho: f64,
    x: Vec<f64>,
    c: Vec<f64>,
    gx: Vec<f64>,
    jac: Vec<f64>,
    w: Vec<f64>,
    pub evals: usize,
}

impl<'a, 'p, P: NlpProblem + ?Sized> AlEvaluator<'a, 'p, P> {
    pub fn new(sp: &'a ScaledProblem<'p, P>) -> Self {
        Self {
            sp,
            lambda: vec![0.0; sp.m],
            rho: 1.0,
            x: vec![0.0; sp.n],
            c: vec![0.0; sp.m],
            gx: vec![0.0; sp.n],
            jac: vec![0.0; sp.rows.len()],
            w: vec![0.0; sp.m],
            evals: 0,
        }
    }

    /// Scaled residuals `c̃(z)` into the internal buffer; returns the scaled
    /// objective.
    fn residuals(&mut self, z: &[f64]) -> f64 {
        let sp = self.sp;
        sp.unscale_x(z, &mut self.x);
        let f = sp.problem.objective(&self.x) * sp.so;
        sp.problem.constraints(&self.x, &mut self.c);
        for r in 0..sp.m {
            self.c[r] /= sp.sc[r];
        }
        for r in sp.n_eq..sp.m {
            self.c[r] -= z[sp.n + r - sp.n_eq];
        }
        f
    }

    /// Scaled objective and `|c̃|∞` at `z`.
    pub fn objective_and_feas(&mut self, z: &[f64]) -> (f64, f64) {
        let f = self.residuals(z);
        let feas = self.c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        (f, feas)
    }

    /// Current scaled residual vector (valid after any evaluation).
    pub fn last_residuals(&self) -> &[f64] {
        &self.c
    }

    pub fn value(&mut self, z: &[f64]) -> f64 {
        self.evals += 1;
        let f = self.residuals(z);
        let mut pen = 0.0;
        let mut lin = 0.0;
        for r in 0..self.sp.m {
            lin += self.lambda[r] * self.c[r];
            pen += self.c[r] * self.c[r];
        }
        f - lin + 0.5 * self.rho * pen
    }

    /// Moves every slack of `z` to its minimizer of `L` for the primal part
    /// of `z` and returns the resulting value.
    pub fn value_with_optimal_slacks(&mut self, z: &mut [f64]) -> f64 {
        self.evals += 1;
        let f = self.residuals(z);
        let sp = self.sp;
        for r in sp.n_eq..sp.m {
            let j = sp.n + r - sp.n_eq;
            let raw = self.c[r] + z[j];
            z[j] = (raw - self.lambda[r] / self.rho).clamp(sp.lo[j], sp.hi[j]);
            self.c[r] = raw - z[j];
        }
        let mut pen = 0.0;
        let mut lin = 0.0;
        for r in 0..sp.m {
            lin += self.lambda[r] * self.c[r];
            pen += self.c[r] * self.c[r];
        }
        f - lin + 0.5 * self.rho * pen
    }

    pub fn value_and_gradient(&mut self, z: &[f64], g: &mut [f64]) -> f64 {
        let val = self.value(z);
        let sp = self.sp;
        sp.problem.gradient(&self.x, &mut self.gx);
        sp.problem.jacobian_values(&self.x, &mut self.jac);
        // w = (λ - ρ c̃) / sc, so that ∇ₓ = so ∇f - Jᵀ w.
        for r in 0..sp.m {
            self.w[r] = (self.lambda[r] - self.rho * self.c[r]) / sp.sc[r];
        }
        for j in 0..sp.n {
            g[j] = sp.so * self.gx[j];
        }
        for (k, v) in self.jac.iter().enumerate() {
            g[sp.cols[k]] -= v * self.w[sp.rows[k]];
        }
        for j in 0..sp.n {
            g[j] *= sp.dx[j];
        }
        for r in sp.n_eq..sp.m {
            g[sp.n + r - sp.n_eq] = self.lambda[r] - self.rho * self.c[r];
        }
        val
    }
}

enum Inner {
    QuasiNewton(inner::InnerSolver),
    Newton(Box<newton::NewtonSolver>),
}

fn project(z: &mut [f64], lo: &[f64], hi: &[f64]) {
    for j in 0..z.len() {
        z[j] = z[j].clamp(lo[j], hi[j]);
    }
}

/// Solves `problem` from `x0`. Iteration lines go to `log` when given.
pub fn solve<P: NlpProblem + ?Sized>(
    problem: &P,
    x0: &[f64],
    options: &SolverOptions,
    mut log: Option<&mut dyn Write>,
) -> Result<Solution, SolverError> {
    options.validate()?;
    let start = Instant::now();
    let sp = ScaledProblem::new(problem)?;
    if x0.len() != sp.n {
        return Err(SolverError::Dimension {
            expected: sp.n,
            got: x0.len(),
        });
    }

    // Scaled start point with slacks at the clipped inequality values.
    let mut z = vec![0.0; sp.dim()];
    for j in 0..sp.n {
        z[j] = x0[j] / sp.dx[j];
    }
    let mut c0 = vec![0.0; sp.m];
    problem.constraints(x0, &mut c0);
    for r in sp.n_eq..sp.m {
        z[sp.n + r - sp.n_eq] = c0[r] / sp.sc[r];
    }
    project(&mut z, &sp.lo, &sp.hi);

    let mut al = AlEvaluator::new(&sp);
    al.rho = options.rho0;
    let hessian = problem.hessian_structure();
    if hessian.iter().any(|&(i, j)| i >= sp.n || j > i) {
        return Err(SolverError::Inconsistent(
            "Hessian entry outside the lower triangle",
        ));
    }
    let mut inner_ws = if hessian.is_empty() {
        Inner::QuasiNewton(inner::InnerSolver::new(
            sp.dim(),
            options.quasi_newton_memory,
        ))
    } else {
        Inner::Newton(Box::new(newton::NewtonSolver::new(&sp, hessian)))
    };
    let mut grad = vec![0.0; sp.dim()];

    let mut total_inner = 0usize;
    let mut feas_prev = f64::INFINITY;
    let mut omega = 1.0f64.max(options.tol_stat);
    let mut status = SolveStatus::MaxIter;
    let mut outer = 0usize;
    let mut last_feas = f64::NAN;
    let mut last_stat = f64::NAN;

    while outer < options.max_outer {
        outer += 1;
        let res = match &mut inner_ws {
            Inner::QuasiNewton(q) => {
                q.minimize(&mut al, &mut z, omega, options.max_inner, options.armijo_c)
            }
            Inner::Newton(nw) => {
                nw.minimize(&mut al, &mut z, omega, options.max_inner, options.armijo_c)
            }
        };
        total_inner += res.iterations;
        if !res.finite {
            status = SolveStatus::Error;
            break;
        }
        let (f, feas) = al.objective_and_feas(&z);
        if !(f.is_finite() && feas.is_finite()) {
            status = SolveStatus::Error;
            break;
        }
        // Projected gradient of L before the multiplier update equals the
        // projected Lagrangian gradient at the updated multipliers.
        al.value_and_gradient(&z, &mut grad);
        let stat = inner::pg_norm(&z, &grad, &sp.lo, &sp.hi);
        let rho = al.rho;
        al.objective_and_feas(&z);
        for r in 0..sp.m {
            al.lambda[r] -= rho * al.last_residuals()[r];
        }
        last_feas = feas;
        last_stat = stat;
        if let Some(sink) = log.as_deref_mut() {
            let line = OuterLog {
                outer,
                inner: res.iterations,
                objective: f,
                feas,
                stat,
                rho,
            };
            let _ = writeln!(sink, "{line}");
        }
        log::debug!(
            "outer {outer}: inner {} f {f:.6e} feas {feas:.3e} stat {stat:.3e} rho {rho:.1e}",
            res.iterations
        );
        let stat_tol = options.tol_stat * (1.0 + f.abs());
        if feas <= options.tol_feas && stat <= stat_tol {
            status = SolveStatus::OptimalLocal;
            break;
        }
        if feas > options.tol_feas && feas > options.feas_decrease * feas_prev {
            al.rho *= options.rho_growth;
            if al.rho > options.rho_max {
                status = SolveStatus::InfeasibleStall;
                break;
            }
        }
        feas_prev = feas;
        omega = (omega * 0.1).max(0.1 * stat_tol).min(1.0 / al.rho.sqrt());
        omega = omega.max(0.1 * stat_tol);
    }

    let mut x = vec![0.0; sp.n];
    sp.unscale_x(&z, &mut x);
    let multipliers: Vec<f64> = (0..sp.m)
        .map(|r| al.lambda[r] / (sp.so * sp.sc[r]))
        .collect();
    let objective = problem.objective(&x);
    if !objective.is_finite() {
        status = SolveStatus::Error;
    }
    Ok(Solution {
        x,
        multipliers,
        report: SolveReport {
            status,
            objective,
            feas_inf_norm: last_feas,
            stat_inf_norm: last_stat,
            outer_iters: outer,
            inner_iters: total_inner,
            wall_time: start.elapsed().as_secs_f64(),
        },
    })
}
