//! Projected Newton method for the bound-constrained augmented-Lagrangian
//! subproblem, used when the problem supplies second derivatives.
//!
//! Each iteration first moves every slack to its exact minimizer for the
//! current `x`. Slacks that stay strictly inside their box are then
//! eliminated, which leaves the reduced matrix
//!
//! ```text
//! M = D ∇²ₓₓℓ D + ρ Σ_active J̃_rᵀ J̃_r
//! ```
//!
//! over the free primal variables, where the active rows are the
//! equalities and the inequalities whose slack sits on a bound. Sparse
//! rows are factored with an envelope Cholesky in a bandwidth-reducing
//! order. Rows with many entries would destroy the band, so they are
//! added back through a Sherman-Morrison-Woodbury correction. An
//! indefinite `M` is shifted by a multiple of the identity until it
//! factors. The line search moves only the primal variables and puts the
//! slacks back at their minimizers at every trial point.

use super::inner::{pg_norm, InnerResult};
use super::sparse::{dense_solve, rcm_order, Envelope};
use super::{AlEvaluator, NlpProblem, ScaledProblem};

/// Rows with more entries than this go through the low-rank correction.
const DENSE_ROW_NNZ: usize = 24;

pub(crate) struct NewtonSolver {
    n: usize,
    dim: usize,
    inv: Vec<usize>,
    env: Envelope,
    backup: Vec<f64>,
    hess_rows: Vec<usize>,
    hess_cols: Vec<usize>,
    hess_vals: Vec<f64>,
    row_ptr: Vec<usize>,
    row_k: Vec<usize>,
    dense_rows: Vec<usize>,
    is_dense: Vec<bool>,
    g: Vec<f64>,
    d: Vec<f64>,
    z_new: Vec<f64>,
    free: Vec<bool>,
    y: Vec<f64>,
    rhs: Vec<f64>,
    delta_last: f64,
}

impl NewtonSolver {
    pub fn new<P: NlpProblem + ?Sized>(
        sp: &ScaledProblem<'_, P>,
        hessian: Vec<(usize, usize)>,
    ) -> Self {
        let n = sp.n;
        let (hess_rows, hess_cols): (Vec<usize>, Vec<usize>) = hessian.into_iter().unzip();

        let mut row_count = vec![0usize; sp.m + 1];
        for &r in &sp.rows {
            row_count[r + 1] += 1;
        }
        for r in 0..sp.m {
            row_count[r + 1] += row_count[r];
        }
        let row_ptr = row_count.clone();
        let mut fill = row_count;
        let mut row_k = vec![0usize; sp.rows.len()];
        for (k, &r) in sp.rows.iter().enumerate() {
            row_k[fill[r]] = k;
            fill[r] += 1;
        }
        let is_dense: Vec<bool> = (0..sp.m)
            .map(|r| row_ptr[r + 1] - row_ptr[r] > DENSE_ROW_NNZ)
            .collect();
        let dense_rows: Vec<usize> = (0..sp.m).filter(|&r| is_dense[r]).collect();

        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (&i, &j) in hess_rows.iter().zip(&hess_cols) {
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        for r in 0..sp.m {
            if is_dense[r] {
                continue;
            }
            let ks = &row_k[row_ptr[r]..row_ptr[r + 1]];
            for (a, &ka) in ks.iter().enumerate() {
                for &kb in &ks[..a] {
                    let (ca, cb) = (sp.cols[ka], sp.cols[kb]);
                    if ca != cb {
                        adj[ca].push(cb);
                        adj[cb].push(ca);
                    }
                }
            }
        }
        for list in adj.iter_mut() {
            list.sort_unstable();
            list.dedup();
        }
        let perm = rcm_order(&adj);
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let first: Vec<usize> = (0..n)
            .map(|i| {
                adj[perm[i]]
                    .iter()
                    .map(|&w| inv[w])
                    .filter(|&w| w < i)
                    .min()
                    .unwrap_or(i)
            })
            .collect();
        let env = Envelope::new(first);
        let dim = sp.dim();
        Self {
            n,
            dim,
            inv,
            backup: vec![0.0; env.vals.len()],
            env,
            hess_vals: vec![0.0; hess_rows.len()],
            hess_rows,
            hess_cols,
            row_ptr,
            row_k,
            dense_rows,
            is_dense,
            g: vec![0.0; dim],
            d: vec![0.0; dim],
            z_new: vec![0.0; dim],
            free: vec![true; dim],
            y: vec![0.0; sp.m],
            rhs: vec![0.0; n],
            delta_last: 0.0,
        }
    }

    pub fn minimize<P: NlpProblem + ?Sized>(
        &mut self,
        al: &mut AlEvaluator<'_, '_, P>,
        z: &mut [f64],
        omega: f64,
        max_iter: usize,
        armijo_c: f64,
    ) -> InnerResult {
        let sp = al.sp;
        let mut iterations = 0;
        loop {
            al.value_with_optimal_slacks(z);
            let f = al.value_and_gradient(z, &mut self.g);
            if !f.is_finite() {
                return InnerResult {
                    iterations,
                    finite: false,
                };
            }
            let pg = pg_norm(z, &self.g, &sp.lo, &sp.hi);
            if pg <= omega || iterations >= max_iter {
                break;
            }
            iterations += 1;
            let eps = pg.min(1e-3);
            for j in 0..self.dim {
                self.free[j] = !((z[j] - sp.lo[j] <= eps && self.g[j] > 0.0)
                    || (sp.hi[j] - z[j] <= eps && self.g[j] < 0.0));
            }
            let newton_ok = self.newton_direction(al);
            self.fixed_to_bounds(z, &sp.lo, &sp.hi);
            let mut slope = dot(&self.g[..self.n], &self.d[..self.n]);
            if !newton_ok || !(slope < 0.0) {
                for j in 0..self.dim {
                    self.d[j] = -self.g[j];
                }
                self.fixed_to_bounds(z, &sp.lo, &sp.hi);
                slope = dot(&self.g[..self.n], &self.d[..self.n]);
                if !(slope < 0.0) {
                    break;
                }
            }
            let accepted = self.line_search(al, z, f, armijo_c);
            log::trace!(
                "newton {iterations}: f {f:.9e} pg {pg:.3e} newton {newton_ok} shift {:.1e} step {:?}",
                self.delta_last,
                accepted.map(|(_, s)| s)
            );
            match accepted.map(|(v, _)| v) {
                Some(v) if v.is_finite() => z.copy_from_slice(&self.z_new),
                Some(_) => {
                    return InnerResult {
                        iterations,
                        finite: false,
                    }
                }
                None => break,
            }
        }
        InnerResult {
            iterations,
            finite: true,
        }
    }

    /// Variables held out of the Newton system step onto the bound their
    /// gradient pushes them to.
    fn fixed_to_bounds(&mut self, z: &[f64], lo: &[f64], hi: &[f64]) {
        for j in 0..self.dim {
            if !self.free[j] {
                self.d[j] = if self.g[j] > 0.0 {
                    lo[j] - z[j]
                } else {
                    hi[j] - z[j]
                };
            }
        }
    }

    /// Fills `self.d` with the reduced Newton step. Needs the evaluator
    /// state of the latest gradient evaluation.
    fn newton_direction<P: NlpProblem + ?Sized>(&mut self, al: &AlEvaluator<'_, '_, P>) -> bool {
        let sp = al.sp;
        let n = self.n;
        let rho = al.rho;
        let slack_free = |free: &[bool], r: usize| r >= sp.n_eq && free[sp.n + r - sp.n_eq];

        for r in 0..sp.m {
            self.y[r] = -al.w[r];
        }
        sp.problem
            .hessian_values(&al.x, sp.so, &self.y, &mut self.hess_vals);
        self.env.clear();
        for k in 0..self.hess_vals.len() {
            let (i, j) = (self.hess_rows[k], self.hess_cols[k]);
            if self.free[i] && self.free[j] {
                let v = self.hess_vals[k] * sp.dx[i] * sp.dx[j];
                self.env.add(self.inv[i], self.inv[j], v);
            }
        }
        for r in 0..sp.m {
            if self.is_dense[r] || slack_free(&self.free, r) {
                continue;
            }
            let inv_sc = 1.0 / sp.sc[r];
            let ks = &self.row_k[self.row_ptr[r]..self.row_ptr[r + 1]];
            for (a, &ka) in ks.iter().enumerate() {
                let ca = sp.cols[ka];
                if !self.free[ca] {
                    continue;
                }
                let ja = al.jac[ka] * sp.dx[ca] * inv_sc;
                for &kb in &ks[..=a] {
                    let cb = sp.cols[kb];
                    if !self.free[cb] {
                        continue;
                    }
                    let jb = al.jac[kb] * sp.dx[cb] * inv_sc;
                    self.env.add(self.inv[ca], self.inv[cb], rho * ja * jb);
                }
            }
        }
        let mut diag_sum = 0.0;
        let mut n_free = 0usize;
        for j in 0..n {
            let p = self.inv[j];
            let pos = self.env.pos(p, p);
            if self.free[j] {
                diag_sum += self.env.vals[pos].abs();
                n_free += 1;
            } else {
                self.env.vals[pos] = 1.0;
            }
        }
        let diag_scale = (diag_sum / n_free.max(1) as f64).max(1e-12);
        self.backup.copy_from_slice(&self.env.vals);

        let mut delta = if self.delta_last > 0.0 {
            (self.delta_last * 0.25).max(1e-12 * diag_scale)
        } else {
            0.0
        };
        for _ in 0..40 {
            if delta > 0.0 {
                self.env.vals.copy_from_slice(&self.backup);
                for j in 0..n {
                    if self.free[j] {
                        let p = self.inv[j];
                        let pos = self.env.pos(p, p);
                        self.env.vals[pos] += delta;
                    }
                }
            }
            if self.env.factor().is_ok() {
                self.delta_last = delta;
                if !self.solve_reduced(al) {
                    return false;
                }
                self.d[n..].fill(0.0);
                return self.d.iter().all(|v| v.is_finite());
            }
            self.env.vals.copy_from_slice(&self.backup);
            delta = (delta * 10.0).max(1e-8 * diag_scale);
        }
        false
    }

    /// Solves the factored reduced system for the primal part of `self.d`,
    /// adding the dense rows back through the Woodbury identity.
    fn solve_reduced<P: NlpProblem + ?Sized>(&mut self, al: &AlEvaluator<'_, '_, P>) -> bool {
        let sp = al.sp;
        let n = self.n;
        let rho = al.rho;
        let slack_free = |free: &[bool], r: usize| r >= sp.n_eq && free[sp.n + r - sp.n_eq];

        // Reduced gradient: free slacks have zero gradient after the
        // slack update, so only the primal part enters.
        for j in 0..n {
            let p = self.inv[j];
            self.rhs[p] = if self.free[j] { -self.g[j] } else { 0.0 };
        }
        self.env.solve(&mut self.rhs);

        let active_dense: Vec<usize> = self
            .dense_rows
            .iter()
            .copied()
            .filter(|&r| !slack_free(&self.free, r))
            .collect();
        if !active_dense.is_empty() {
            let kd = active_dense.len();
            let mut a_cols: Vec<Vec<f64>> = Vec::with_capacity(kd);
            let mut w_cols: Vec<Vec<f64>> = Vec::with_capacity(kd);
            for &r in &active_dense {
                let mut a = vec![0.0; n];
                for &k in &self.row_k[self.row_ptr[r]..self.row_ptr[r + 1]] {
                    let c = sp.cols[k];
                    if self.free[c] {
                        a[self.inv[c]] += al.jac[k] * sp.dx[c] / sp.sc[r];
                    }
                }
                let mut w = a.clone();
                self.env.solve(&mut w);
                a_cols.push(a);
                w_cols.push(w);
            }
            let mut cap = vec![0.0; kd * kd];
            let mut t = vec![0.0; kd];
            for p in 0..kd {
                for q in 0..kd {
                    cap[p * kd + q] = dot(&a_cols[p], &w_cols[q]);
                }
                cap[p * kd + p] += 1.0 / rho;
                t[p] = dot(&a_cols[p], &self.rhs);
            }
            if !dense_solve(&mut cap, &mut t) {
                return false;
            }
            for q in 0..kd {
                for (x, w) in self.rhs.iter_mut().zip(&w_cols[q]) {
                    *x -= t[q] * w;
                }
            }
        }

        for j in 0..n {
            self.d[j] = self.rhs[self.inv[j]];
        }
        true
    }

    /// Projected backtracking on the primal variables. Slacks are set to
    /// their minimizers at every trial point, which makes the searched
    /// function continuously differentiable in `x` with gradient `g[..n]`.
    fn line_search<P: NlpProblem + ?Sized>(
        &mut self,
        al: &mut AlEvaluator<'_, '_, P>,
        z: &[f64],
        f: f64,
        armijo_c: f64,
    ) -> Option<(f64, f64)> {
        let sp = al.sp;
        let n = self.n;
        let mut step = 1.0;
        for _ in 0..60 {
            let mut decrease = 0.0;
            for j in 0..n {
                let t = (z[j] + step * self.d[j]).clamp(sp.lo[j], sp.hi[j]);
                self.z_new[j] = t;
                decrease += self.g[j] * (t - z[j]);
            }
            if decrease < 0.0 {
                self.z_new[n..].copy_from_slice(&z[n..]);
                let f_new = al.value_with_optimal_slacks(&mut self.z_new);
                if f_new.is_finite() && f_new <= f + armijo_c * decrease {
                    return Some((f_new, step));
                }
            }
            step *= 0.5;
        }
        None
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
