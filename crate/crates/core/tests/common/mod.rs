//! Helpers shared by the integration suites: small analytic NLPs with
//! known optima, an independent convex-hull membership oracle and the
//! desk-scale planning instance.

#![allow(dead_code)]

use orbtrack::ephemeris_io::{default_target, TargetEphemeris};
use orbtrack::solver::NlpProblem;
use orbtrack::transcription::ProblemConfig;
use orbtrack::{TimeGrid, Vec3};

type Scalar = fn(&[f64]) -> f64;
type VecFn = fn(&[f64], &mut [f64]);
type HessFn = fn(&[f64], f64, &[f64], &mut [f64]);

/// A small problem with dense derivatives given as plain functions.
pub struct Dense {
    pub n: usize,
    pub n_eq: usize,
    pub n_ineq: usize,
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
    pub il: Vec<f64>,
    pub iu: Vec<f64>,
    pub f: Scalar,
    pub g: VecFn,
    pub c: VecFn,
    /// Row-major `(n_eq + n_ineq) x n` Jacobian.
    pub jac: VecFn,
    /// Row-major lower triangle of the Lagrangian Hessian, if available.
    pub hess: Option<HessFn>,
}

impl NlpProblem for Dense {
    fn n_vars(&self) -> usize {
        self.n
    }
    fn n_eq(&self) -> usize {
        self.n_eq
    }
    fn n_ineq(&self) -> usize {
        self.n_ineq
    }
    fn variable_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (self.lb.clone(), self.ub.clone())
    }
    fn inequality_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (self.il.clone(), self.iu.clone())
    }
    fn objective(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        (self.g)(x, grad)
    }
    fn constraints(&self, x: &[f64], out: &mut [f64]) {
        (self.c)(x, out)
    }
    fn jacobian_structure(&self) -> Vec<(usize, usize)> {
        let m = self.n_eq + self.n_ineq;
        (0..m)
            .flat_map(|r| (0..self.n).map(move |c| (r, c)))
            .collect()
    }
    fn jacobian_values(&self, x: &[f64], values: &mut [f64]) {
        (self.jac)(x, values)
    }
    fn hessian_structure(&self) -> Vec<(usize, usize)> {
        match self.hess {
            Some(_) => (0..self.n)
                .flat_map(|i| (0..=i).map(move |j| (i, j)))
                .collect(),
            None => Vec::new(),
        }
    }
    fn hessian_values(&self, x: &[f64], obj_factor: f64, y: &[f64], values: &mut [f64]) {
        if let Some(h) = self.hess {
            h(x, obj_factor, y, values)
        }
    }
}

pub struct Oracle {
    pub name: &'static str,
    pub problem: Dense,
    pub x0: Vec<f64>,
    pub x_star: Vec<f64>,
    pub f_star: f64,
}

const INF: f64 = f64::INFINITY;

fn free(n: usize) -> (Vec<f64>, Vec<f64>) {
    (vec![-INF; n], vec![INF; n])
}

/// Projection of (1, 2) onto the line x + y = 1.
fn projection_qp() -> Oracle {
    let (lb, ub) = free(2);
    Oracle {
        name: "projection onto a line",
        problem: Dense {
            n: 2,
            n_eq: 1,
            n_ineq: 0,
            lb,
            ub,
            il: vec![],
            iu: vec![],
            f: |x| (x[0] - 1.0).powi(2) + (x[1] - 2.0).powi(2),
            g: |x, g| {
                g[0] = 2.0 * (x[0] - 1.0);
                g[1] = 2.0 * (x[1] - 2.0);
            },
            c: |x, c| c[0] = x[0] + x[1] - 1.0,
            jac: |_, j| {
                j[0] = 1.0;
                j[1] = 1.0;
            },
            hess: Some(|_, s, _, h| {
                h[0] = 2.0 * s;
                h[1] = 0.0;
                h[2] = 2.0 * s;
            }),
        },
        x0: vec![5.0, -3.0],
        x_star: vec![0.0, 1.0],
        f_star: 2.0,
    }
}

/// Closest point to the origin in the half-plane x + y >= 2.
fn halfplane_qp() -> Oracle {
    let (lb, ub) = free(2);
    Oracle {
        name: "half-plane distance",
        problem: Dense {
            n: 2,
            n_eq: 0,
            n_ineq: 1,
            lb,
            ub,
            il: vec![2.0],
            iu: vec![INF],
            f: |x| x[0] * x[0] + x[1] * x[1],
            g: |x, g| {
                g[0] = 2.0 * x[0];
                g[1] = 2.0 * x[1];
            },
            c: |x, c| c[0] = x[0] + x[1],
            jac: |_, j| {
                j[0] = 1.0;
                j[1] = 1.0;
            },
            hess: None,
        },
        x0: vec![-1.0, 0.5],
        x_star: vec![1.0, 1.0],
        f_star: 2.0,
    }
}

/// A separable quadratic whose minimizer lies outside the box.
fn boxed_quadratic() -> Oracle {
    Oracle {
        name: "box-constrained quadratic",
        problem: Dense {
            n: 2,
            n_eq: 0,
            n_ineq: 0,
            lb: vec![0.0, 0.0],
            ub: vec![2.0, 5.0],
            il: vec![],
            iu: vec![],
            f: |x| (x[0] - 3.0).powi(2) + (x[1] + 1.0).powi(2),
            g: |x, g| {
                g[0] = 2.0 * (x[0] - 3.0);
                g[1] = 2.0 * (x[1] + 1.0);
            },
            c: |_, _| {},
            jac: |_, _| {},
            hess: None,
        },
        x0: vec![1.0, 1.0],
        x_star: vec![2.0, 0.0],
        f_star: 2.0,
    }
}

/// Linear objective on the circle of radius sqrt(2).
fn circle_linear() -> Oracle {
    let (lb, ub) = free(2);
    Oracle {
        name: "linear objective on a circle",
        problem: Dense {
            n: 2,
            n_eq: 1,
            n_ineq: 0,
            lb,
            ub,
            il: vec![],
            iu: vec![],
            f: |x| x[0] + x[1],
            g: |_, g| {
                g[0] = 1.0;
                g[1] = 1.0;
            },
            c: |x, c| c[0] = x[0] * x[0] + x[1] * x[1] - 2.0,
            jac: |x, j| {
                j[0] = 2.0 * x[0];
                j[1] = 2.0 * x[1];
            },
            hess: Some(|_, _, y, h| {
                h[0] = 2.0 * y[0];
                h[1] = 0.0;
                h[2] = 2.0 * y[0];
            }),
        },
        x0: vec![-0.5, -1.5],
        x_star: vec![-1.0, -1.0],
        f_star: -2.0,
    }
}

/// Small linear program with one active inequality and one active bound.
fn small_lp() -> Oracle {
    Oracle {
        name: "two-variable linear program",
        problem: Dense {
            n: 2,
            n_eq: 0,
            n_ineq: 1,
            lb: vec![0.0, 0.0],
            ub: vec![INF, INF],
            il: vec![-INF],
            iu: vec![1.0],
            f: |x| -x[0] - 2.0 * x[1],
            g: |_, g| {
                g[0] = -1.0;
                g[1] = -2.0;
            },
            c: |x, c| c[0] = x[0] + x[1],
            jac: |_, j| {
                j[0] = 1.0;
                j[1] = 1.0;
            },
            hess: None,
        },
        x0: vec![0.2, 0.2],
        x_star: vec![0.0, 1.0],
        f_star: -2.0,
    }
}

fn rosen(x: f64, y: f64) -> f64 {
    (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2)
}

/// Minimizes `g` on `[lo, hi]` by a fine scan followed by golden-section
/// refinement around the best sample.
pub fn brute_force_1d(g: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let samples = 200_000;
    let h = (hi - lo) / samples as f64;
    let best = (0..=samples)
        .map(|k| lo + k as f64 * h)
        .min_by(|a, b| g(*a).total_cmp(&g(*b)))
        .unwrap();
    let (mut a, mut b) = (best - h, best + h);
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let c = b - ratio * (b - a);
        let d = a + ratio * (b - a);
        if g(c) < g(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

/// Rosenbrock restricted to the line x + y = 1.
fn constrained_rosenbrock() -> Oracle {
    let x = brute_force_1d(|t| rosen(t, 1.0 - t), -3.0, 3.0);
    let (lb, ub) = free(2);
    Oracle {
        name: "Rosenbrock on x + y = 1",
        problem: Dense {
            n: 2,
            n_eq: 1,
            n_ineq: 0,
            lb,
            ub,
            il: vec![],
            iu: vec![],
            f: |x| rosen(x[0], x[1]),
            g: |x, g| {
                g[0] = -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]);
                g[1] = 200.0 * (x[1] - x[0] * x[0]);
            },
            c: |x, c| c[0] = x[0] + x[1] - 1.0,
            jac: |_, j| {
                j[0] = 1.0;
                j[1] = 1.0;
            },
            hess: Some(|x, s, _, h| {
                h[0] = s * (2.0 - 400.0 * x[1] + 1200.0 * x[0] * x[0]);
                h[1] = s * (-400.0 * x[0]);
                h[2] = s * 200.0;
            }),
        },
        x0: vec![0.0, 0.0],
        x_star: vec![x, 1.0 - x],
        f_star: rosen(x, 1.0 - x),
    }
}

/// Hock-Schittkowski problem 71, with its published optimum.
fn hs71() -> Oracle {
    Oracle {
        name: "Hock-Schittkowski 71",
        problem: Dense {
            n: 4,
            n_eq: 1,
            n_ineq: 1,
            lb: vec![1.0; 4],
            ub: vec![5.0; 4],
            il: vec![25.0],
            iu: vec![INF],
            f: |x| x[0] * x[3] * (x[0] + x[1] + x[2]) + x[2],
            g: |x, g| {
                g[0] = x[3] * (2.0 * x[0] + x[1] + x[2]);
                g[1] = x[0] * x[3];
                g[2] = x[0] * x[3] + 1.0;
                g[3] = x[0] * (x[0] + x[1] + x[2]);
            },
            c: |x, c| {
                c[0] = x.iter().map(|v| v * v).sum::<f64>() - 40.0;
                c[1] = x.iter().product();
            },
            jac: |x, j| {
                for k in 0..4 {
                    j[k] = 2.0 * x[k];
                    j[4 + k] = (0..4).filter(|&i| i != k).map(|i| x[i]).product();
                }
            },
            hess: None,
        },
        x0: vec![1.0, 5.0, 5.0, 1.0],
        x_star: vec![1.0, 4.742_999_63, 3.821_149_98, 1.379_408_29],
        f_star: 17.014_017_3,
    }
}

pub fn oracle_problems() -> Vec<Oracle> {
    vec![
        projection_qp(),
        halfplane_qp(),
        boxed_quadratic(),
        circle_linear(),
        small_lp(),
        constrained_rosenbrock(),
        hs71(),
    ]
}

/// Membership in the convex hull of
/// `{(u, φ, 0) : u = 0, φ >= 0} ∪ {(u, φ, 1) : u_min <= u <= u_max, φ >= |u|²}`
/// decided by building the convex combination explicitly.
pub fn in_hull_by_decomposition(b: f64, phi: f64, u: Vec3, u_min: Vec3, u_max: Vec3) -> bool {
    if !(0.0..=1.0).contains(&b) {
        return false;
    }
    if b == 0.0 {
        return u == Vec3::ZERO && phi >= 0.0;
    }
    // The on-point carries all of u scaled up by 1/b.
    let u1 = u / b;
    for k in 0..3 {
        if u1[k] < u_min[k] || u1[k] > u_max[k] {
            return false;
        }
    }
    let phi1 = u1.norm_squared();
    if b == 1.0 {
        return phi >= phi1;
    }
    // Remaining epigraph mass goes to the off-point.
    let phi0 = (phi - b * phi1) / (1.0 - b);
    phi0 >= 0.0
}

/// The desk-scale instance: one hour in 60 s steps, budget scaled to 17.
pub fn desk_config() -> ProblemConfig {
    ProblemConfig {
        grid: TimeGrid::new(0.0, 60.0, 60).unwrap(),
        n_budget: 17,
        ..ProblemConfig::default()
    }
}

pub fn target_for(cfg: &ProblemConfig) -> TargetEphemeris {
    default_target(&cfg.grid, cfg.mu).unwrap()
}

/// Distance of a relaxed switch from the nearer of 0 and 1.
pub fn integrality_distance(b: f64) -> f64 {
    b.min(1.0 - b).max(0.0)
}
