//! Lifted RK4 transcription of the tracking problem into a sparse NLP.
//!
//! Decision vector, in order of the blocks of [`VariableLayout`]:
//!
//! | block    | size      | content                                          |
//! |----------|-----------|--------------------------------------------------|
//! | `r`      | 3(N+1)    | chaser position per node, km                     |
//! | `v`      | 3(N+1)    | chaser velocity per node, km/s                   |
//! | `u`      | 3(N+1)    | thrust acceleration per node, km/s²              |
//! | `stages` | 28N       | per interval: k1..k4, kv1..kv4 (xyz), d̃1..d̃4     |
//! | `phi`    | N+1       | perspective epigraph variables (perspective mode)|
//! | `b`      | N+1       | relaxed on/off switches (relaxed modes)          |
//!
//! so the dimension is `37N + 9` plus `N+1` for each of `phi` and `b` when
//! present. Equality rows number `34N + 6`: per interval the node update
//! (6), the stage definitions (24) and the scaled inverse cubic distances
//! (4), followed by the six initial-condition rows. Inequality rows, in
//! order: the on/off envelope (6 per node), the activation budget (1), the
//! proximity band (2 per node: lower then upper) and the perspective cut
//! (1 per node). The cut `b φ >= |u|²` is imposed in the concave form
//! `φ - |u|² / (b + ε_p) >= 0`, which describes the same set for `b > 0`
//! up to a relative slack of `ε_p` and keeps the subproblems convex in
//! `(b, φ, u)`; at `b = 0` the envelope rows force `u = 0` anyway. With
//! fixed switches the envelope becomes a variable box on
//! `u` and the budget is checked at build time, so only the proximity rows
//! remain.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dynamics::{
    self, DynamicsError, StageBlock, State, TimeGrid, Trajectory, Vec3, MU_EARTH,
};
use crate::ephemeris_io::{EphemerisError, TargetEphemeris};
use crate::solver::NlpProblem;

/// Norm used in the proximity band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum NormKind {
    L1,
    L2,
}

impl NormKind {
    pub fn q(self) -> u8 {
        match self {
            NormKind::L1 => 1,
            NormKind::L2 => 2,
        }
    }

    pub fn of(self, d: Vec3) -> f64 {
        match self {
            NormKind::L1 => d.norm_l1(),
            NormKind::L2 => d.norm(),
        }
    }
}

impl From<NormKind> for u8 {
    fn from(n: NormKind) -> u8 {
        n.q()
    }
}

impl TryFrom<u8> for NormKind {
    type Error = String;
    fn try_from(q: u8) -> Result<Self, String> {
        match q {
            1 => Ok(NormKind::L1),
            2 => Ok(NormKind::L2),
            other => Err(format!("norm must be 1 or 2, got {other}")),
        }
    }
}

/// Physical and algorithmic parameters of one planning problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemConfig {
    /// km³/s²
    pub mu: f64,
    pub grid: TimeGrid,
    /// km
    pub delta_min: f64,
    /// km
    pub delta_max: f64,
    /// Initial chaser offset from the target, km.
    pub delta0: Vec3,
    /// km/s²
    pub u_min: Vec3,
    /// km/s²
    pub u_max: Vec3,
    pub n_budget: usize,
    pub norm_q: NormKind,
    pub beta: f64,
    /// km; smoothing of |·| in the L1 band.
    pub abs_smoothing_eps: f64,
    /// Use Earth-radius / 1e-3 km/s² reference units for solver scaling.
    pub nondimensional_scaling: bool,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            mu: MU_EARTH,
            grid: TimeGrid {
                t0: 0.0,
                dt: 10.0,
                n_intervals: 360,
            },
            delta_min: 10.0,
            delta_max: 50.0,
            delta0: Vec3::new(10.0, 10.0, 10.0),
            u_min: Vec3::new(-1.0, -1.0, -1.0),
            u_max: Vec3::new(1.0, 1.0, 1.0),
            n_budget: 100,
            norm_q: NormKind::L2,
            beta: 0.5,
            abs_smoothing_eps: 1e-6,
            nondimensional_scaling: false,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("mu must be positive and finite")]
    Mu,
    #[error("time grid: {0}")]
    Grid(String),
    #[error("need 0 < delta_min < delta_max")]
    Band,
    #[error("need u_min < 0 < u_max in every component")]
    ThrustBounds,
    #[error("budget must lie in 1..={max}, got {got}")]
    Budget { got: usize, max: usize },
    #[error("beta must lie in (0, 1), got {0}")]
    Beta(f64),
    #[error("smoothing epsilon must be positive, got {0}")]
    Epsilon(f64),
    #[error("initial offset norm {norm} km lies outside [{lo}, {hi}] km")]
    InitialOffset { norm: f64, lo: f64, hi: f64 },
}

impl ProblemConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return Err(ConfigError::Mu);
        }
        TimeGrid::new(self.grid.t0, self.grid.dt, self.grid.n_intervals)
            .map_err(|e| ConfigError::Grid(e.to_string()))?;
        if !(self.delta_min > 0.0 && self.delta_min < self.delta_max && self.delta_max.is_finite())
        {
            return Err(ConfigError::Band);
        }
        for c in 0..3 {
            if !(self.u_min[c] < 0.0 && self.u_max[c] > 0.0)
                || !self.u_min[c].is_finite()
                || !self.u_max[c].is_finite()
            {
                return Err(ConfigError::ThrustBounds);
            }
        }
        let max = self.grid.n_nodes();
        if self.n_budget == 0 || self.n_budget > max {
            return Err(ConfigError::Budget {
                got: self.n_budget,
                max,
            });
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(ConfigError::Beta(self.beta));
        }
        if !(self.abs_smoothing_eps > 0.0 && self.abs_smoothing_eps.is_finite()) {
            return Err(ConfigError::Epsilon(self.abs_smoothing_eps));
        }
        let norm = self.norm_q.of(self.delta0);
        if !(norm >= self.delta_min && norm <= self.delta_max) {
            return Err(ConfigError::InitialOffset {
                norm,
                lo: self.delta_min,
                hi: self.delta_max,
            });
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Chaser initial state: target state at the first epoch shifted by
    /// `delta0` in position, same velocity.
    pub fn initial_state(&self, target: &TargetEphemeris) -> State {
        State::new(target.r_bar[0] + self.delta0, target.v_bar[0])
    }

    /// Proximity band bounds in the units returned by
    /// [`proximity_value`].
    pub fn band_bounds(&self) -> (f64, f64) {
        match self.norm_q {
            NormKind::L2 => (self.delta_min.powi(2), self.delta_max.powi(2)),
            NormKind::L1 => (
                self.delta_min,
                self.delta_max + 3.0 * self.abs_smoothing_eps,
            ),
        }
    }
}

/// Which problem variant is transcribed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Continuous relaxation `0 <= b <= 1`.
    Relaxed,
    /// Relaxation tightened with the perspective cut `b φ >= |u|²`.
    RelaxedPerspective,
    /// Switches fixed to given 0/1 values.
    FixedBinary,
}

impl Mode {
    pub fn has_binaries(self) -> bool {
        !matches!(self, Mode::FixedBinary)
    }

    pub fn has_phi(self) -> bool {
        matches!(self, Mode::RelaxedPerspective)
    }
}

/// Index bookkeeping of the decision vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariableLayout {
    pub n_intervals: usize,
    pub r: Range<usize>,
    pub v: Range<usize>,
    pub u: Range<usize>,
    pub stages: Range<usize>,
    pub phi: Range<usize>,
    pub b: Range<usize>,
    /// Slacks the solver appends for the inequality rows; they sit
    /// directly after the decision vector.
    pub slack: Range<usize>,
}

pub const STAGE_BLOCK_LEN: usize = 28;
pub const EQ_ROWS_PER_INTERVAL: usize = 34;

impl VariableLayout {
    pub fn new(n_intervals: usize, mode: Mode) -> Self {
        let nn = n_intervals + 1;
        let r = 0..3 * nn;
        let v = r.end..r.end + 3 * nn;
        let u = v.end..v.end + 3 * nn;
        let stages = u.end..u.end + STAGE_BLOCK_LEN * n_intervals;
        let phi = stages.end..stages.end + if mode.has_phi() { nn } else { 0 };
        let b = phi.end..phi.end + if mode.has_binaries() { nn } else { 0 };
        let n_ineq = inequality_count(n_intervals, mode);
        let slack = b.end..b.end + n_ineq;
        Self {
            n_intervals,
            r,
            v,
            u,
            stages,
            phi,
            b,
            slack,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_intervals + 1
    }

    pub fn n_vars(&self) -> usize {
        self.b.end
    }

    pub fn r(&self, i: usize) -> usize {
        self.r.start + 3 * i
    }

    pub fn v(&self, i: usize) -> usize {
        self.v.start + 3 * i
    }

    pub fn u(&self, i: usize) -> usize {
        self.u.start + 3 * i
    }

    /// Position-rate stage `j` (0-based) of interval `i`.
    pub fn k(&self, i: usize, j: usize) -> usize {
        self.stages.start + STAGE_BLOCK_LEN * i + 3 * j
    }

    pub fn kv(&self, i: usize, j: usize) -> usize {
        self.stages.start + STAGE_BLOCK_LEN * i + 12 + 3 * j
    }

    pub fn dtil(&self, i: usize, j: usize) -> usize {
        self.stages.start + STAGE_BLOCK_LEN * i + 24 + j
    }

    pub fn phi(&self, i: usize) -> usize {
        debug_assert!(!self.phi.is_empty());
        self.phi.start + i
    }

    pub fn b(&self, i: usize) -> usize {
        debug_assert!(!self.b.is_empty());
        self.b.start + i
    }
}

pub fn equality_count(n_intervals: usize) -> usize {
    EQ_ROWS_PER_INTERVAL * n_intervals + 6
}

pub fn inequality_count(n_intervals: usize, mode: Mode) -> usize {
    let nn = n_intervals + 1;
    match mode {
        Mode::FixedBinary => 2 * nn,
        Mode::Relaxed => 6 * nn + 1 + 2 * nn,
        Mode::RelaxedPerspective => 6 * nn + 1 + 2 * nn + nn,
    }
}

#[derive(Debug, Error)]
pub enum TranscriptionError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("target ephemeris does not match the grid: {0}")]
    Grid(#[from] EphemerisError),
    #[error("fixed switches must be given exactly for fixed-binary mode")]
    FixedBinariesPresence,
    #[error("expected {expected} fixed switches, got {got}")]
    FixedBinariesLength { expected: usize, got: usize },
    #[error("fixed switch {index} is {value}, must be 0 or 1")]
    FixedBinariesValue { index: usize, value: f64 },
    #[error("{active} active switches exceed the budget of {budget}")]
    BudgetExceeded { active: usize, budget: usize },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Smoothed |d| used in the L1 band.
fn smooth_abs(d: f64, eps: f64) -> f64 {
    (d * d + eps * eps).sqrt()
}

/// Proximity measure between a chaser and a target position: `|d|²` for
/// the L2 band, `Σ sqrt(d_j² + ε²)` for the L1 band.
pub fn proximity_value(r: Vec3, r_bar: Vec3, norm: NormKind, eps: f64) -> f64 {
    let d = r - r_bar;
    match norm {
        NormKind::L2 => d.norm_squared(),
        NormKind::L1 => smooth_abs(d.x, eps) + smooth_abs(d.y, eps) + smooth_abs(d.z, eps),
    }
}

/// `b φ - |u|²`; the perspective cut holds when this is nonnegative.
pub fn perspective_residual(b: f64, phi: f64, u: Vec3) -> f64 {
    b * phi - u.norm_squared()
}

/// Regularization of the switch in the transcribed perspective row.
pub const PERSPECTIVE_EPS: f64 = 1e-6;

/// Transcribed perspective row `φ - |u|² / (b + ε_p)`. Same sign as
/// [`perspective_residual`] when `b > 0` and `ε_p` is negligible.
pub fn perspective_row(b: f64, phi: f64, u: Vec3) -> f64 {
    PerspectiveLocal::new(b, phi, u).value
}

/// Value and derivatives of [`perspective_row`] over `(u, φ, b)`.
struct PerspectiveLocal {
    value: f64,
    /// Ordered `u.x, u.y, u.z, φ, b`.
    grad: [f64; 5],
    hess: [[f64; 5]; 5],
}

impl PerspectiveLocal {
    fn new(b: f64, phi: f64, u: Vec3) -> Self {
        let t = b + PERSPECTIVE_EPS;
        let uu = u.norm_squared();
        let value = phi - uu / t;
        let mut grad = [0.0; 5];
        let mut hess = [[0.0; 5]; 5];
        for c in 0..3 {
            grad[c] = -2.0 * u[c] / t;
            hess[c][c] = -2.0 / t;
            hess[4][c] = 2.0 * u[c] / (t * t);
            hess[c][4] = hess[4][c];
        }
        grad[3] = 1.0;
        grad[4] = uu / (t * t);
        hess[4][4] = -2.0 * uu / (t * t * t);
        Self { value, grad, hess }
    }
}

/// Reference magnitudes used to scale the decision variables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleReference {
    pub length: f64,
    pub speed: f64,
    pub accel: f64,
    pub dtil: f64,
}

impl ScaleReference {
    fn for_config(config: &ProblemConfig, target: &TargetEphemeris) -> Self {
        if config.nondimensional_scaling {
            let length = 6378.0;
            let accel = 1e-3;
            Self {
                length,
                speed: (length * accel).sqrt(),
                accel,
                dtil: accel / length,
            }
        } else {
            // Variation scales: km for positions, m/s for rates, 1e-5 km/s²
            // for thrust. d̃ varies by 3 d̃ δr / r for a position change δr.
            let radius = target.r_bar.iter().map(|r| r.norm()).sum::<f64>() / target.len() as f64;
            let length = 1.0;
            Self {
                length,
                speed: 1e-3,
                accel: 1e-5,
                dtil: 3.0 * config.mu / radius.powi(4) * length,
            }
        }
    }
}

/// The transcribed NLP for one mode.
#[derive(Debug, Clone)]
pub struct TranscribedProblem {
    pub config: ProblemConfig,
    pub mode: Mode,
    pub layout: VariableLayout,
    pub fixed_binaries: Option<Vec<f64>>,
    pub r_bar: Vec<Vec3>,
    pub v_bar: Vec<Vec3>,
    pub scales: ScaleReference,
    n_eq: usize,
    n_ineq: usize,
    structure: Vec<(usize, usize)>,
    hess_structure: Vec<(usize, usize)>,
    var_scales: Vec<f64>,
    con_scales: Vec<f64>,
}

/// Builds the problem for `mode`. `fixed_binaries` must be given exactly
/// when `mode` is [`Mode::FixedBinary`].
pub fn build(
    config: &ProblemConfig,
    target: &TargetEphemeris,
    mode: Mode,
    fixed_binaries: Option<&[f64]>,
) -> Result<TranscribedProblem, TranscriptionError> {
    config.validate()?;
    target.check_grid(&config.grid)?;
    let n = config.grid.n_intervals;
    let nn = n + 1;
    let fixed = match (mode, fixed_binaries) {
        (Mode::FixedBinary, Some(b)) => {
            if b.len() != nn {
                return Err(TranscriptionError::FixedBinariesLength {
                    expected: nn,
                    got: b.len(),
                });
            }
            if let Some((index, value)) =
                b.iter().enumerate().find(|(_, v)| **v != 0.0 && **v != 1.0)
            {
                return Err(TranscriptionError::FixedBinariesValue {
                    index,
                    value: *value,
                });
            }
            let active = b.iter().filter(|v| **v == 1.0).count();
            if active > config.n_budget {
                return Err(TranscriptionError::BudgetExceeded {
                    active,
                    budget: config.n_budget,
                });
            }
            Some(b.to_vec())
        }
        (Mode::FixedBinary, None) | (_, Some(_)) => {
            return Err(TranscriptionError::FixedBinariesPresence)
        }
        (_, None) => None,
    };

    let layout = VariableLayout::new(n, mode);
    let mut problem = TranscribedProblem {
        config: config.clone(),
        mode,
        layout,
        fixed_binaries: fixed,
        r_bar: target.r_bar.clone(),
        v_bar: target.v_bar.clone(),
        scales: ScaleReference::for_config(config, target),
        n_eq: equality_count(n),
        n_ineq: inequality_count(n, mode),
        structure: Vec::new(),
        hess_structure: Vec::new(),
        var_scales: Vec::new(),
        con_scales: Vec::new(),
    };
    problem.var_scales = problem.compute_variable_scales();

    // Sparsity and row scales from a nominal point: the unthrusted target
    // orbit shifted by the initial offset.
    let nominal = problem.nominal_point()?;
    let mut structure = Vec::new();
    let mut row_scale = vec![0.0f64; problem.n_eq + problem.n_ineq];
    let dx = &problem.var_scales;
    problem.jacobian_entries(&nominal, &mut |r, c, v| {
        structure.push((r, c));
        row_scale[r] = row_scale[r].max((v * dx[c]).abs());
    });
    for s in row_scale.iter_mut() {
        if !(*s > 0.0 && s.is_finite()) {
            *s = 1.0;
        }
    }
    let mut hess = Vec::new();
    let zeros = vec![0.0; problem.n_eq + problem.n_ineq];
    problem.hessian_entries(&nominal, 1.0, &zeros, &mut |i, j, _| hess.push((i, j)));
    problem.structure = structure;
    problem.hess_structure = hess;
    problem.con_scales = row_scale;
    Ok(problem)
}

/// Stage values of every interval of `traj` under node controls `controls`.
pub fn stages_of(
    traj: &Trajectory,
    controls: &[Vec3],
    mu: f64,
) -> Result<Vec<StageBlock>, DynamicsError> {
    let dt = traj.grid.dt;
    (0..traj.grid.n_intervals)
        .map(|i| {
            dynamics::rk4_step(&traj.states[i], controls[i], controls[i + 1], dt, mu)
                .map(|(_, s)| s)
        })
        .collect()
}

/// Initial point from a zero-control simulation: states and stages copied
/// from `traj`, `u = 0`, `b = N_b / (N+1)`, `φ = 1e-8`.
pub fn init_from_sim(
    traj: &Trajectory,
    config: &ProblemConfig,
    mode: Mode,
) -> Result<Vec<f64>, TranscriptionError> {
    let nn = traj.grid.n_nodes();
    let controls = vec![Vec3::ZERO; nn];
    let stages = stages_of(traj, &controls, config.mu)?;
    let layout = VariableLayout::new(traj.grid.n_intervals, mode);
    let b0 = config.n_budget as f64 / nn as f64;
    Ok(assemble_point(
        &layout,
        &traj.states,
        &stages,
        &controls,
        &vec![b0; nn],
        &vec![1e-8; nn],
    ))
}

/// Lifts a point of the plain relaxation into the perspective layout of
/// the same grid. Shared blocks are copied and each `φ` is set just above
/// `|u|² / (b + ε_p)`, so the perspective rows hold at the start.
pub fn lift_to_perspective(relaxed: &VariableLayout, x: &[f64]) -> Vec<f64> {
    let target = VariableLayout::new(relaxed.n_intervals, Mode::RelaxedPerspective);
    let mut out = vec![0.0; target.n_vars()];
    let shared = relaxed.stages.end;
    out[..shared].copy_from_slice(&x[..shared]);
    for i in 0..target.n_nodes() {
        let b = if relaxed.b.is_empty() {
            1.0
        } else {
            x[relaxed.b(i)]
        };
        let u = vec_at(x, relaxed.u(i));
        out[target.b(i)] = b;
        out[target.phi(i)] = u.norm_squared() / (b.max(0.0) + PERSPECTIVE_EPS) * (1.0 + 1e-9);
    }
    out
}

/// Packs states, stages, controls, switches and epigraph values into a
/// decision vector for `layout`. Blocks absent from the layout are ignored.
pub fn assemble_point(
    layout: &VariableLayout,
    states: &[State],
    stages: &[StageBlock],
    controls: &[Vec3],
    b: &[f64],
    phi: &[f64],
) -> Vec<f64> {
    let mut x = vec![0.0; layout.n_vars()];
    let put = |x: &mut [f64], at: usize, v: Vec3| {
        x[at] = v.x;
        x[at + 1] = v.y;
        x[at + 2] = v.z;
    };
    for i in 0..layout.n_nodes() {
        put(&mut x, layout.r(i), states[i].r);
        put(&mut x, layout.v(i), states[i].v);
        put(&mut x, layout.u(i), controls[i]);
        if !layout.phi.is_empty() {
            x[layout.phi(i)] = phi[i];
        }
        if !layout.b.is_empty() {
            x[layout.b(i)] = b[i];
        }
    }
    for (i, st) in stages.iter().enumerate() {
        for j in 0..4 {
            put(&mut x, layout.k(i, j), st.k[j]);
            put(&mut x, layout.kv(i, j), st.kv[j]);
            x[layout.dtil(i, j)] = st.dtil[j];
        }
    }
    x
}

#[inline]
fn vec_at(x: &[f64], at: usize) -> Vec3 {
    Vec3::new(x[at], x[at + 1], x[at + 2])
}

impl TranscribedProblem {
    pub fn n_eq_rows(&self) -> usize {
        self.n_eq
    }

    pub fn n_ineq_rows(&self) -> usize {
        self.n_ineq
    }

    pub fn n_nodes(&self) -> usize {
        self.layout.n_nodes()
    }

    /// First inequality row of each group, relative to the inequality block.
    fn ineq_offsets(&self) -> (usize, usize, usize, usize) {
        let nn = self.n_nodes();
        match self.mode {
            Mode::FixedBinary => (0, 0, 0, 2 * nn),
            _ => (0, 6 * nn, 6 * nn + 1, 8 * nn + 1),
        }
    }

    /// Row index of node `i`'s lower proximity row (the upper row follows).
    pub fn proximity_row(&self, i: usize) -> usize {
        self.n_eq + self.ineq_offsets().2 + 2 * i
    }

    pub fn budget_row(&self) -> Option<usize> {
        self.mode
            .has_binaries()
            .then(|| self.n_eq + self.ineq_offsets().1)
    }

    pub fn initial_condition_rows(&self) -> Range<usize> {
        self.n_eq - 6..self.n_eq
    }

    pub fn node_state(&self, x: &[f64], i: usize) -> State {
        State::new(vec_at(x, self.layout.r(i)), vec_at(x, self.layout.v(i)))
    }

    pub fn control(&self, x: &[f64], i: usize) -> Vec3 {
        vec_at(x, self.layout.u(i))
    }

    pub fn controls(&self, x: &[f64]) -> Vec<Vec3> {
        (0..self.n_nodes()).map(|i| self.control(x, i)).collect()
    }

    /// Switch values: decision variables in relaxed modes, the fixed
    /// values otherwise.
    pub fn switches(&self, x: &[f64]) -> Vec<f64> {
        match &self.fixed_binaries {
            Some(b) => b.clone(),
            None => x[self.layout.b.clone()].to_vec(),
        }
    }

    pub fn trajectory(&self, x: &[f64]) -> Trajectory {
        Trajectory {
            grid: self.config.grid,
            states: (0..self.n_nodes()).map(|i| self.node_state(x, i)).collect(),
        }
    }

    /// Proximity measure of every node (see [`proximity_value`]).
    pub fn proximity_values(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_nodes())
            .map(|i| {
                proximity_value(
                    vec_at(x, self.layout.r(i)),
                    self.r_bar[i],
                    self.config.norm_q,
                    self.config.abs_smoothing_eps,
                )
            })
            .collect()
    }

    /// Writes the equality residuals (length `34N + 6`).
    pub fn equality_residuals(&self, x: &[f64], out: &mut [f64]) {
        let l = &self.layout;
        let dt = self.config.grid.dt;
        let h = 0.5 * dt;
        let w = dt / 6.0;
        let mu = self.config.mu;
        for i in 0..l.n_intervals {
            let base = EQ_ROWS_PER_INTERVAL * i;
            let r = vec_at(x, l.r(i));
            let v = vec_at(x, l.v(i));
            let r1 = vec_at(x, l.r(i + 1));
            let v1 = vec_at(x, l.v(i + 1));
            let u0 = vec_at(x, l.u(i));
            let u1 = vec_at(x, l.u(i + 1));
            let um = (u0 + u1) * 0.5;
            let k: [Vec3; 4] = std::array::from_fn(|j| vec_at(x, l.k(i, j)));
            let kv: [Vec3; 4] = std::array::from_fn(|j| vec_at(x, l.kv(i, j)));
            let d: [f64; 4] = std::array::from_fn(|j| x[l.dtil(i, j)]);
            let p = [r, r + k[0] * h, r + k[1] * h, r + k[2] * dt];

            let mut put = |off: usize, val: Vec3| {
                out[base + off] = val.x;
                out[base + off + 1] = val.y;
                out[base + off + 2] = val.z;
            };
            put(0, r1 - r - (k[0] + k[1] * 2.0 + k[2] * 2.0 + k[3]) * w);
            put(3, v1 - v - (kv[0] + kv[1] * 2.0 + kv[2] * 2.0 + kv[3]) * w);
            put(6, k[0] - v);
            put(9, k[1] - v - kv[0] * h);
            put(12, k[2] - v - kv[1] * h);
            put(15, k[3] - v - kv[2] * dt);
            put(18, kv[0] - u0 + p[0] * d[0]);
            put(21, kv[1] - um + p[1] * d[1]);
            put(24, kv[2] - um + p[2] * d[2]);
            put(27, kv[3] - u1 + p[3] * d[3]);
            for j in 0..4 {
                let n2 = p[j].norm_squared();
                out[base + 30 + j] = d[j] - mu / (n2 * n2.sqrt());
            }
        }
        let ic = EQ_ROWS_PER_INTERVAL * l.n_intervals;
        let r0 = vec_at(x, l.r(0)) - (self.r_bar[0] + self.config.delta0);
        let v0 = vec_at(x, l.v(0)) - self.v_bar[0];
        out[ic..ic + 3].copy_from_slice(&r0.to_array());
        out[ic + 3..ic + 6].copy_from_slice(&v0.to_array());
    }

    /// Writes the inequality values (row order as in the module docs).
    pub fn inequality_values(&self, x: &[f64], out: &mut [f64]) {
        let l = &self.layout;
        let nn = self.n_nodes();
        let (_, budget, prox, persp) = self.ineq_offsets();
        if self.mode.has_binaries() {
            let mut total = 0.0;
            for i in 0..nn {
                let u = vec_at(x, l.u(i));
                let b = x[l.b(i)];
                total += b;
                for c in 0..3 {
                    out[6 * i + c] = u[c] - b * self.config.u_max[c];
                    out[6 * i + 3 + c] = u[c] - b * self.config.u_min[c];
                }
            }
            out[budget] = total;
        }
        for (i, g) in self.proximity_values(x).into_iter().enumerate() {
            out[prox + 2 * i] = g;
            out[prox + 2 * i + 1] = g;
        }
        if self.mode.has_phi() {
            for i in 0..nn {
                out[persp + i] = perspective_row(x[l.b(i)], x[l.phi(i)], vec_at(x, l.u(i)));
            }
        }
    }

    /// Visits every Jacobian entry `(row, col, value)` at `x`. The order
    /// and the set of coordinates do not depend on `x`.
    fn jacobian_entries(&self, x: &[f64], emit: &mut dyn FnMut(usize, usize, f64)) {
        let l = &self.layout;
        let dt = self.config.grid.dt;
        let h = 0.5 * dt;
        let w = dt / 6.0;
        let mu = self.config.mu;
        let stage_shift = [0.0, h, h, dt];
        for i in 0..l.n_intervals {
            let base = EQ_ROWS_PER_INTERVAL * i;
            let r = vec_at(x, l.r(i));
            let k: [Vec3; 4] = std::array::from_fn(|j| vec_at(x, l.k(i, j)));
            let d: [f64; 4] = std::array::from_fn(|j| x[l.dtil(i, j)]);
            let p = [r, r + k[0] * h, r + k[1] * h, r + k[2] * dt];
            for c in 0..3 {
                let row = base + c;
                emit(row, l.r(i + 1) + c, 1.0);
                emit(row, l.r(i) + c, -1.0);
                emit(row, l.k(i, 0) + c, -w);
                emit(row, l.k(i, 1) + c, -2.0 * w);
                emit(row, l.k(i, 2) + c, -2.0 * w);
                emit(row, l.k(i, 3) + c, -w);
            }
            for c in 0..3 {
                let row = base + 3 + c;
                emit(row, l.v(i + 1) + c, 1.0);
                emit(row, l.v(i) + c, -1.0);
                emit(row, l.kv(i, 0) + c, -w);
                emit(row, l.kv(i, 1) + c, -2.0 * w);
                emit(row, l.kv(i, 2) + c, -2.0 * w);
                emit(row, l.kv(i, 3) + c, -w);
            }
            for j in 0..4 {
                for c in 0..3 {
                    let row = base + 6 + 3 * j + c;
                    emit(row, l.k(i, j) + c, 1.0);
                    emit(row, l.v(i) + c, -1.0);
                    if j > 0 {
                        emit(row, l.kv(i, j - 1) + c, -stage_shift[j]);
                    }
                }
            }
            for j in 0..4 {
                for c in 0..3 {
                    let row = base + 18 + 3 * j + c;
                    emit(row, l.kv(i, j) + c, 1.0);
                    match j {
                        0 => emit(row, l.u(i) + c, -1.0),
                        3 => emit(row, l.u(i + 1) + c, -1.0),
                        _ => {
                            emit(row, l.u(i) + c, -0.5);
                            emit(row, l.u(i + 1) + c, -0.5);
                        }
                    }
                    emit(row, l.dtil(i, j), p[j][c]);
                    emit(row, l.r(i) + c, d[j]);
                    if j > 0 {
                        emit(row, l.k(i, j - 1) + c, d[j] * stage_shift[j]);
                    }
                }
            }
            for j in 0..4 {
                let row = base + 30 + j;
                let n2 = p[j].norm_squared();
                let coef = 3.0 * mu / (n2 * n2 * n2.sqrt());
                emit(row, l.dtil(i, j), 1.0);
                for c in 0..3 {
                    emit(row, l.r(i) + c, coef * p[j][c]);
                }
                if j > 0 {
                    for c in 0..3 {
                        emit(row, l.k(i, j - 1) + c, coef * p[j][c] * stage_shift[j]);
                    }
                }
            }
        }
        let ic = EQ_ROWS_PER_INTERVAL * l.n_intervals;
        for c in 0..3 {
            emit(ic + c, l.r(0) + c, 1.0);
        }
        for c in 0..3 {
            emit(ic + 3 + c, l.v(0) + c, 1.0);
        }

        let nn = self.n_nodes();
        let ineq = self.n_eq;
        let (_, budget, prox, persp) = self.ineq_offsets();
        if self.mode.has_binaries() {
            for i in 0..nn {
                for c in 0..3 {
                    let row = ineq + 6 * i + c;
                    emit(row, l.u(i) + c, 1.0);
                    emit(row, l.b(i), -self.config.u_max[c]);
                }
                for c in 0..3 {
                    let row = ineq + 6 * i + 3 + c;
                    emit(row, l.u(i) + c, 1.0);
                    emit(row, l.b(i), -self.config.u_min[c]);
                }
            }
            for i in 0..nn {
                emit(ineq + budget, l.b(i), 1.0);
            }
        }
        let eps = self.config.abs_smoothing_eps;
        for i in 0..nn {
            let dvec = vec_at(x, l.r(i)) - self.r_bar[i];
            let grad: [f64; 3] = std::array::from_fn(|c| match self.config.norm_q {
                NormKind::L2 => 2.0 * dvec[c],
                NormKind::L1 => dvec[c] / smooth_abs(dvec[c], eps),
            });
            for half in 0..2 {
                let row = ineq + prox + 2 * i + half;
                for c in 0..3 {
                    emit(row, l.r(i) + c, grad[c]);
                }
            }
        }
        if self.mode.has_phi() {
            for i in 0..nn {
                let row = ineq + persp + i;
                let p = self.perspective_local(x, i);
                for (a, col) in Self::perspective_cols(l, i).into_iter().enumerate() {
                    emit(row, col, p.grad[a]);
                }
            }
        }
    }

    fn perspective_local(&self, x: &[f64], i: usize) -> PerspectiveLocal {
        let l = &self.layout;
        PerspectiveLocal::new(x[l.b(i)], x[l.phi(i)], vec_at(x, l.u(i)))
    }

    fn perspective_cols(l: &VariableLayout, i: usize) -> [usize; 5] {
        let u = l.u(i);
        [u, u + 1, u + 2, l.phi(i), l.b(i)]
    }

    /// Visits the lower-triangle entries of `σ ∇²f + Σ y_r ∇²c_r` at `x`.
    /// Coordinates may repeat; their values add up. The visiting order
    /// does not depend on `x`, `σ` or `y`.
    fn hessian_entries(
        &self,
        x: &[f64],
        obj_factor: f64,
        y: &[f64],
        emit: &mut dyn FnMut(usize, usize, f64),
    ) {
        let mut lower = |i: usize, j: usize, v: f64| {
            if i >= j {
                emit(i, j, v)
            } else {
                emit(j, i, v)
            }
        };
        let l = &self.layout;
        let dt = self.config.grid.dt;
        let h = 0.5 * dt;
        let mu = self.config.mu;
        let shift = [0.0, h, h, dt];
        let n_inv = 1.0 / self.config.grid.n_intervals as f64;

        if !self.mode.has_phi() {
            for j in l.u.clone() {
                lower(j, j, obj_factor * 2.0 * n_inv);
            }
        }
        for i in 0..l.n_intervals {
            let base = EQ_ROWS_PER_INTERVAL * i;
            let r = vec_at(x, l.r(i));
            for j in 0..4 {
                for c in 0..3 {
                    let yr = y[base + 18 + 3 * j + c];
                    lower(l.dtil(i, j), l.r(i) + c, yr);
                    if j > 0 {
                        lower(l.dtil(i, j), l.k(i, j - 1) + c, yr * shift[j]);
                    }
                }
            }
            for j in 0..4 {
                let yr = y[base + 30 + j];
                let p = if j == 0 {
                    r
                } else {
                    r + vec_at(x, l.k(i, j - 1)) * shift[j]
                };
                let n2 = p.norm_squared();
                let inv5 = 1.0 / (n2 * n2 * n2.sqrt());
                let inv7 = inv5 / n2;
                let hess = |a: usize, b: usize| {
                    let eye = if a == b { inv5 } else { 0.0 };
                    yr * 3.0 * mu * (eye - 5.0 * inv7 * p[a] * p[b])
                };
                for a in 0..3 {
                    for b in 0..=a {
                        lower(l.r(i) + a, l.r(i) + b, hess(a, b));
                    }
                }
                if j > 0 {
                    let s = shift[j];
                    let kb = l.k(i, j - 1);
                    for a in 0..3 {
                        for b in 0..3 {
                            lower(kb + a, l.r(i) + b, s * hess(a, b));
                        }
                        for b in 0..=a {
                            lower(kb + a, kb + b, s * s * hess(a, b));
                        }
                    }
                }
            }
        }

        let nn = self.n_nodes();
        let (_, _, prox, persp) = self.ineq_offsets();
        let eps = self.config.abs_smoothing_eps;
        for i in 0..nn {
            let row = self.n_eq + prox + 2 * i;
            let yr = y[row] + y[row + 1];
            let d = vec_at(x, l.r(i)) - self.r_bar[i];
            for c in 0..3 {
                let curv = match self.config.norm_q {
                    NormKind::L2 => 2.0,
                    NormKind::L1 => {
                        let s = d[c] * d[c] + eps * eps;
                        eps * eps / (s * s.sqrt())
                    }
                };
                lower(l.r(i) + c, l.r(i) + c, yr * curv);
            }
        }
        if self.mode.has_phi() {
            for i in 0..nn {
                let yr = y[self.n_eq + persp + i];
                let p = self.perspective_local(x, i);
                let cols = Self::perspective_cols(l, i);
                for a in 0..5 {
                    for c in 0..=a {
                        lower(cols[a], cols[c], yr * p.hess[a][c]);
                    }
                }
            }
        }
    }

    fn compute_variable_scales(&self) -> Vec<f64> {
        let l = &self.layout;
        let s = self.scales;
        let mut d = vec![1.0; l.n_vars()];
        d[l.r.clone()].fill(s.length);
        d[l.v.clone()].fill(s.speed);
        d[l.u.clone()].fill(s.accel);
        for i in 0..l.n_intervals {
            for j in 0..4 {
                for c in 0..3 {
                    d[l.k(i, j) + c] = s.speed;
                    d[l.kv(i, j) + c] = s.accel;
                }
                d[l.dtil(i, j)] = s.dtil;
            }
        }
        d[l.phi.clone()].fill(s.accel * s.accel);
        d
    }

    fn nominal_point(&self) -> Result<Vec<f64>, DynamicsError> {
        let nn = self.n_nodes();
        let states: Vec<State> = (0..nn)
            .map(|i| State::new(self.r_bar[i] + self.config.delta0, self.v_bar[i]))
            .collect();
        let traj = Trajectory {
            grid: self.config.grid,
            states,
        };
        let controls = vec![Vec3::ZERO; nn];
        let stages = stages_of(&traj, &controls, self.config.mu)?;
        let b0 = self.config.n_budget as f64 / nn as f64;
        let phi0 = self.scales.accel * self.scales.accel;
        Ok(assemble_point(
            &self.layout,
            &traj.states,
            &stages,
            &controls,
            &vec![b0; nn],
            &vec![phi0; nn],
        ))
    }
}

impl NlpProblem for TranscribedProblem {
    fn n_vars(&self) -> usize {
        self.layout.n_vars()
    }

    fn n_eq(&self) -> usize {
        self.n_eq
    }

    fn n_ineq(&self) -> usize {
        self.n_ineq
    }

    fn variable_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let l = &self.layout;
        let n = l.n_vars();
        let mut lo = vec![f64::NEG_INFINITY; n];
        let mut hi = vec![f64::INFINITY; n];
        for i in 0..l.n_intervals {
            for j in 0..4 {
                lo[l.dtil(i, j)] = 0.0;
            }
        }
        for i in 0..l.n_nodes() {
            let on = self.fixed_binaries.as_ref().map_or(1.0, |b| b[i]);
            for c in 0..3 {
                lo[l.u(i) + c] = on * self.config.u_min[c];
                hi[l.u(i) + c] = on * self.config.u_max[c];
            }
        }
        for j in l.b.clone() {
            lo[j] = 0.0;
            hi[j] = 1.0;
        }
        for j in l.phi.clone() {
            lo[j] = 0.0;
        }
        (lo, hi)
    }

    fn inequality_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let nn = self.n_nodes();
        let mut lo = vec![f64::NEG_INFINITY; self.n_ineq];
        let mut hi = vec![f64::INFINITY; self.n_ineq];
        let (_, budget, prox, persp) = self.ineq_offsets();
        if self.mode.has_binaries() {
            for i in 0..nn {
                for c in 0..3 {
                    hi[6 * i + c] = 0.0;
                    lo[6 * i + 3 + c] = 0.0;
                }
            }
            hi[budget] = self.config.n_budget as f64;
        }
        let (band_lo, band_hi) = self.config.band_bounds();
        for i in 0..nn {
            lo[prox + 2 * i] = band_lo;
            hi[prox + 2 * i + 1] = band_hi;
        }
        if self.mode.has_phi() {
            for i in 0..nn {
                lo[persp + i] = 0.0;
            }
        }
        (lo, hi)
    }

    fn objective(&self, x: &[f64]) -> f64 {
        let n = self.config.grid.n_intervals as f64;
        if self.mode.has_phi() {
            x[self.layout.phi.clone()].iter().sum::<f64>() / n
        } else {
            x[self.layout.u.clone()].iter().map(|u| u * u).sum::<f64>() / n
        }
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        grad.fill(0.0);
        let n = self.config.grid.n_intervals as f64;
        if self.mode.has_phi() {
            grad[self.layout.phi.clone()].fill(1.0 / n);
        } else {
            for j in self.layout.u.clone() {
                grad[j] = 2.0 * x[j] / n;
            }
        }
    }

    fn constraints(&self, x: &[f64], out: &mut [f64]) {
        let (eq, ineq) = out.split_at_mut(self.n_eq);
        self.equality_residuals(x, eq);
        self.inequality_values(x, ineq);
    }

    fn jacobian_structure(&self) -> Vec<(usize, usize)> {
        self.structure.clone()
    }

    fn jacobian_values(&self, x: &[f64], values: &mut [f64]) {
        let mut k = 0;
        self.jacobian_entries(x, &mut |_, _, v| {
            values[k] = v;
            k += 1;
        });
        debug_assert_eq!(k, values.len());
    }

    fn hessian_structure(&self) -> Vec<(usize, usize)> {
        self.hess_structure.clone()
    }

    fn hessian_values(&self, x: &[f64], obj_factor: f64, y: &[f64], values: &mut [f64]) {
        let mut k = 0;
        self.hessian_entries(x, obj_factor, y, &mut |_, _, v| {
            values[k] = v;
            k += 1;
        });
        debug_assert_eq!(k, values.len());
    }

    fn variable_scales(&self) -> Vec<f64> {
        self.var_scales.clone()
    }

    fn constraint_scales(&self) -> Vec<f64> {
        self.con_scales.clone()
    }

    fn objective_scale(&self) -> f64 {
        self.config.grid.n_intervals as f64 / (self.scales.accel * self.scales.accel)
    }
}
