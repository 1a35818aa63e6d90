//! Two-body point-mass dynamics with a thrust acceleration term, explicit
//! RK4 stepping and forward propagation.
//!
//! Units are km, s, km/s and km/s². The inverse cubic distance is carried
//! pre-multiplied by the gravitational parameter (`mu / |r|^3`, in s⁻²),
//! which keeps every stage quantity well above round-off.

use std::fmt;
use std::ops::{Add, AddAssign, Div, Index, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Geocentric gravitational constant, km³/s².
pub const MU_EARTH: f64 = 398_600.436;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("radius is zero or not finite at interval {interval}, stage {stage}")]
    ZeroRadius { interval: usize, stage: usize },
    #[error("non-finite state or control at interval {0}")]
    NonFinite(usize),
    #[error("time step must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("expected {expected} control values, got {got}")]
    ControlLength { expected: usize, got: usize },
}

/// Cartesian 3-vector.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Self::new(s[0], s[1], s[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn norm_l1(self) -> f64 {
        self.x.abs() + self.y.abs() + self.z.abs()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl fmt::Display for Vec3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl SubAssign for Vec3 {
    fn sub_assign(&mut self, o: Vec3) {
        *self = *self - o;
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

/// Position (km) and velocity (km/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub r: Vec3,
    pub v: Vec3,
}

impl State {
    pub fn new(r: Vec3, v: Vec3) -> Self {
        Self { r, v }
    }

    /// True when the state is finite and strictly away from the origin.
    pub fn is_valid(&self) -> bool {
        self.r.is_finite() && self.v.is_finite() && self.r.norm() > 0.0
    }
}

/// RK4 stage values of one interval. Index 0..4 corresponds to stages 1..4.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageBlock {
    /// Position-rate stages, km/s.
    pub k: [Vec3; 4],
    /// Velocity-rate stages, km/s².
    pub kv: [Vec3; 4],
    /// `mu / |p_j|^3` at each stage evaluation point, s⁻².
    pub dtil: [f64; 4],
}

/// Uniform time grid with `n_intervals + 1` nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub n_intervals: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, n_intervals: usize) -> Result<Self, DynamicsError> {
        if !(dt.is_finite() && dt > 0.0) || !t0.is_finite() {
            return Err(DynamicsError::BadStep(dt));
        }
        if n_intervals == 0 {
            return Err(DynamicsError::ControlLength {
                expected: 1,
                got: 0,
            });
        }
        Ok(Self {
            t0,
            dt,
            n_intervals,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_intervals + 1
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.n_intervals as f64
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_nodes()).map(move |i| self.time(i))
    }
}

/// Chaser states on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub states: Vec<State>,
}

/// Gravitational acceleration `-mu r / |r|^3`.
pub fn gravity_accel(r: Vec3, mu: f64) -> Result<Vec3, DynamicsError> {
    let rn = r.norm();
    if !(rn > 0.0 && rn.is_finite()) {
        return Err(DynamicsError::ZeroRadius {
            interval: 0,
            stage: 0,
        });
    }
    Ok(r * (-mu / (rn * rn * rn)))
}

fn scaled_inverse_cube(p: Vec3, mu: f64, stage: usize) -> Result<f64, DynamicsError> {
    let n2 = p.norm_squared();
    if !(n2 > 0.0 && n2.is_finite()) {
        return Err(DynamicsError::ZeroRadius { interval: 0, stage });
    }
    Ok(mu / (n2 * n2.sqrt()))
}

/// One RK4 step from node `i` to `i+1`.
///
/// The thrust is linear in time across the interval: stage 1 sees `u_i`,
/// stages 2 and 3 the midpoint average, stage 4 sees `u_next`.
pub fn rk4_step(
    s: &State,
    u_i: Vec3,
    u_next: Vec3,
    dt: f64,
    mu: f64,
) -> Result<(State, StageBlock), DynamicsError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(DynamicsError::BadStep(dt));
    }
    if !(s.r.is_finite() && s.v.is_finite() && u_i.is_finite() && u_next.is_finite()) {
        return Err(DynamicsError::NonFinite(0));
    }
    let (r, v) = (s.r, s.v);
    let u_mid = (u_i + u_next) * 0.5;
    let h = 0.5 * dt;

    let k1 = v;
    let d1 = scaled_inverse_cube(r, mu, 1)?;
    let kv1 = u_i - r * d1;

    let p2 = r + k1 * h;
    let d2 = scaled_inverse_cube(p2, mu, 2)?;
    let k2 = v + kv1 * h;
    let kv2 = u_mid - p2 * d2;

    let p3 = r + k2 * h;
    let d3 = scaled_inverse_cube(p3, mu, 3)?;
    let k3 = v + kv2 * h;
    let kv3 = u_mid - p3 * d3;

    let p4 = r + k3 * dt;
    let d4 = scaled_inverse_cube(p4, mu, 4)?;
    let k4 = v + kv3 * dt;
    let kv4 = u_next - p4 * d4;

    let w = dt / 6.0;
    let r_next = r + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * w;
    let v_next = v + (kv1 + kv2 * 2.0 + kv3 * 2.0 + kv4) * w;
    Ok((
        State::new(r_next, v_next),
        StageBlock {
            k: [k1, k2, k3, k4],
            kv: [kv1, kv2, kv3, kv4],
            dtil: [d1, d2, d3, d4],
        },
    ))
}

/// Forward propagation returning the trajectory and the stage values of
/// every interval.
pub fn propagate_with_stages(
    s0: State,
    controls: &[Vec3],
    grid: &TimeGrid,
    mu: f64,
) -> Result<(Trajectory, Vec<StageBlock>), DynamicsError> {
    let n = grid.n_intervals;
    if controls.len() != n + 1 {
        return Err(DynamicsError::ControlLength {
            expected: n + 1,
            got: controls.len(),
        });
    }
    if !s0.is_valid() {
        return Err(DynamicsError::ZeroRadius {
            interval: 0,
            stage: 0,
        });
    }
    let mut states = Vec::with_capacity(n + 1);
    let mut stages = Vec::with_capacity(n);
    states.push(s0);
    for i in 0..n {
        let (next, block) = rk4_step(&states[i], controls[i], controls[i + 1], grid.dt, mu)
            .map_err(|e| match e {
                DynamicsError::ZeroRadius { stage, .. } => {
                    DynamicsError::ZeroRadius { interval: i, stage }
                }
                DynamicsError::NonFinite(_) => DynamicsError::NonFinite(i),
                other => other,
            })?;
        if !next.is_valid() {
            return Err(DynamicsError::NonFinite(i));
        }
        states.push(next);
        stages.push(block);
    }
    Ok((
        Trajectory {
            grid: *grid,
            states,
        },
        stages,
    ))
}

/// Forward propagation of `s0` under node controls `u_0..u_N`.
pub fn propagate(
    s0: State,
    controls: &[Vec3],
    grid: &TimeGrid,
    mu: f64,
) -> Result<Trajectory, DynamicsError> {
    propagate_with_stages(s0, controls, grid, mu).map(|(t, _)| t)
}

/// Specific orbital energy (km²/s²) and specific angular momentum (km²/s).
pub fn conserved_quantities(s: &State, mu: f64) -> (f64, Vec3) {
    let energy = 0.5 * s.v.norm_squared() - mu / s.r.norm();
    (energy, s.r.cross(s.v))
}
