//! Projected limited-memory BFGS for box-constrained minimization of the
//! augmented Lagrangian.

use std::collections::VecDeque;

use super::{AlEvaluator, NlpProblem};

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

pub(crate) struct InnerResult {
    pub iterations: usize,
    pub finite: bool,
}

pub(crate) struct InnerSolver {
    memory: usize,
    pairs: VecDeque<Pair>,
    g: Vec<f64>,
    g_new: Vec<f64>,
    d: Vec<f64>,
    z_new: Vec<f64>,
    free: Vec<bool>,
    alpha: Vec<f64>,
}

impl InnerSolver {
    pub fn new(dim: usize, memory: usize) -> Self {
        Self {
            memory,
            pairs: VecDeque::with_capacity(memory),
            g: vec![0.0; dim],
            g_new: vec![0.0; dim],
            d: vec![0.0; dim],
            z_new: vec![0.0; dim],
            free: vec![true; dim],
            alpha: vec![0.0; memory],
        }
    }

    /// Minimizes `L` over the box starting at `z` (updated in place) until
    /// the projected gradient drops below `omega` or `max_iter` iterations.
    pub fn minimize<P: NlpProblem + ?Sized>(
        &mut self,
        al: &mut AlEvaluator<'_, '_, P>,
        z: &mut [f64],
        omega: f64,
        max_iter: usize,
        armijo_c: f64,
    ) -> InnerResult {
        let sp = al.sp;
        let (lo, hi) = (&sp.lo, &sp.hi);
        let n = z.len();
        self.pairs.clear();
        let mut f = al.value_and_gradient(z, &mut self.g);
        if !f.is_finite() {
            return InnerResult {
                iterations: 0,
                finite: false,
            };
        }
        let mut iterations = 0;
        let mut gamma = 1.0;
        while iterations < max_iter {
            if pg_norm(z, &self.g, lo, hi) <= omega {
                break;
            }
            iterations += 1;
            for j in 0..n {
                self.free[j] =
                    !((z[j] <= lo[j] && self.g[j] > 0.0) || (z[j] >= hi[j] && self.g[j] < 0.0));
            }
            if self.pairs.is_empty() {
                let gmax = self.g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                gamma = if gmax > 0.0 {
                    (1.0 / gmax).min(1.0)
                } else {
                    1.0
                };
            }
            self.direction(gamma);
            let mut slope = dot(&self.g, &self.d);
            if !(slope < 0.0) {
                self.pairs.clear();
                self.steepest(gamma);
                slope = dot(&self.g, &self.d);
                if !(slope < 0.0) {
                    break;
                }
            }

            let mut accepted = self.line_search(al, z, f, armijo_c);
            if accepted.is_none() && !self.pairs.is_empty() {
                self.pairs.clear();
                let gmax = self.g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                gamma = if gmax > 0.0 {
                    (1.0 / gmax).min(1.0)
                } else {
                    1.0
                };
                self.steepest(gamma);
                accepted = self.line_search(al, z, f, armijo_c);
            }
            let Some(f_new) = accepted else {
                break;
            };
            if !f_new.is_finite() {
                return InnerResult {
                    iterations,
                    finite: false,
                };
            }

            al.value_and_gradient(&self.z_new, &mut self.g_new);
            let mut s = vec![0.0; n];
            let mut y = vec![0.0; n];
            for j in 0..n {
                s[j] = self.z_new[j] - z[j];
                y[j] = self.g_new[j] - self.g[j];
            }
            let sy = dot(&s, &y);
            let ss = dot(&s, &s);
            let yy = dot(&y, &y);
            if sy > 1e-10 * (ss * yy).sqrt() && sy > 0.0 {
                if self.pairs.len() == self.memory {
                    self.pairs.pop_front();
                }
                gamma = sy / yy;
                self.pairs.push_back(Pair {
                    s,
                    y,
                    rho: 1.0 / sy,
                });
            }
            z.copy_from_slice(&self.z_new);
            std::mem::swap(&mut self.g, &mut self.g_new);
            f = f_new;
        }
        InnerResult {
            iterations,
            finite: f.is_finite(),
        }
    }

    fn steepest(&mut self, gamma: f64) {
        for j in 0..self.d.len() {
            self.d[j] = if self.free[j] {
                -gamma * self.g[j]
            } else {
                0.0
            };
        }
    }

    /// Two-loop recursion restricted to the free variables.
    fn direction(&mut self, gamma: f64) {
        let n = self.d.len();
        let q = &mut self.d;
        for j in 0..n {
            q[j] = if self.free[j] { self.g[j] } else { 0.0 };
        }
        let k = self.pairs.len();
        for i in (0..k).rev() {
            let p = &self.pairs[i];
            let a = p.rho * masked_dot(&p.s, q, &self.free);
            self.alpha[i] = a;
            for j in 0..n {
                if self.free[j] {
                    q[j] -= a * p.y[j];
                }
            }
        }
        for v in q.iter_mut() {
            *v *= gamma;
        }
        for i in 0..k {
            let p = &self.pairs[i];
            let b = p.rho * masked_dot(&p.y, q, &self.free);
            let coef = self.alpha[i] - b;
            for j in 0..n {
                if self.free[j] {
                    q[j] += coef * p.s[j];
                }
            }
        }
        for v in q.iter_mut() {
            *v = -*v;
        }
    }

    /// Backtracking Armijo search along the projected path. Leaves the
    /// accepted point in `z_new`.
    fn line_search<P: NlpProblem + ?Sized>(
        &mut self,
        al: &mut AlEvaluator<'_, '_, P>,
        z: &[f64],
        f: f64,
        armijo_c: f64,
    ) -> Option<f64> {
        let sp = al.sp;
        let (lo, hi) = (&sp.lo, &sp.hi);
        let mut step = 1.0;
        for _ in 0..60 {
            let mut decrease = 0.0;
            for j in 0..z.len() {
                let t = (z[j] + step * self.d[j]).clamp(lo[j], hi[j]);
                self.z_new[j] = t;
                decrease += self.g[j] * (t - z[j]);
            }
            if decrease >= 0.0 {
                step *= 0.5;
                continue;
            }
            let f_new = al.value(&self.z_new);
            if f_new.is_finite() && f_new <= f + armijo_c * decrease {
                return Some(f_new);
            }
            step *= 0.5;
        }
        None
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn masked_dot(a: &[f64], b: &[f64], mask: &[bool]) -> f64 {
    let mut s = 0.0;
    for j in 0..a.len() {
        if mask[j] {
            s += a[j] * b[j];
        }
    }
    s
}

/// `|P(z - g) - z|∞` over the box `[lo, hi]`.
pub(crate) fn pg_norm(z: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    let mut m = 0.0f64;
    for j in 0..z.len() {
        let p = (z[j] - g[j]).clamp(lo[j], hi[j]) - z[j];
        m = m.max(p.abs());
    }
    m
}
