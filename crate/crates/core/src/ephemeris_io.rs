//! Target ephemeris ingestion and synthesis, plus persistence of planning
//! results as CSV and JSON.
//!
//! Ephemeris files are plain CSV with the header
//! `t_s,x_km,y_km,z_km,vx_kms,vy_kms,vz_kms` and one row per epoch. Epochs
//! must be strictly increasing and uniformly spaced, since the target is
//! consumed node-by-node on the transcription grid without interpolation.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::dynamics::{self, DynamicsError, State, TimeGrid, Trajectory, Vec3};
use crate::pipeline::MissionPlan;

pub const EPHEMERIS_HEADER: [&str; 7] =
    ["t_s", "x_km", "y_km", "z_km", "vx_kms", "vy_kms", "vz_kms"];

/// Relative tolerance on epoch spacing.
pub const SPACING_RTOL: f64 = 1e-9;

/// Perigee radius of the built-in target orbit, km.
pub const DEFAULT_TARGET_PERIGEE_KM: f64 = 6878.0;
/// Eccentricity of the built-in target orbit.
pub const DEFAULT_TARGET_ECCENTRICITY: f64 = 0.02;

#[derive(Debug, Error)]
pub enum EphemerisError {
    #[error("line {line}: expected {expected} fields, found {found}")]
    FieldCount {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: cannot parse `{field}` as a number")]
    BadNumber { line: u64, field: String },
    #[error("line {line}: non-finite value")]
    NonFinite { line: u64 },
    #[error("header must be `{}`", EPHEMERIS_HEADER.join(","))]
    BadHeader,
    #[error("ephemeris needs at least two epochs, found {0}")]
    TooShort(usize),
    #[error("line {line}: epoch does not increase")]
    NonMonotone { line: u64 },
    #[error("line {line}: epoch spacing {spacing} s differs from {expected} s")]
    NonUniform {
        line: u64,
        spacing: f64,
        expected: f64,
    },
    #[error("line {line}: position vector has zero length")]
    ZeroRadius { line: u64 },
    #[error("ephemeris has {found} epochs on a grid that needs {expected}")]
    GridLength { expected: usize, found: usize },
    #[error("epoch {index} at {found} s does not match grid time {expected} s")]
    GridMismatch {
        index: usize,
        expected: f64,
        found: f64,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Time-stamped target states on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetEphemeris {
    pub epochs: Vec<f64>,
    pub r_bar: Vec<Vec3>,
    pub v_bar: Vec<Vec3>,
}

impl TargetEphemeris {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn state(&self, i: usize) -> State {
        State::new(self.r_bar[i], self.v_bar[i])
    }

    /// Grid implied by the first epoch and the first spacing.
    pub fn grid(&self) -> TimeGrid {
        TimeGrid {
            t0: self.epochs[0],
            dt: self.epochs[1] - self.epochs[0],
            n_intervals: self.epochs.len() - 1,
        }
    }

    /// Checks that the epochs coincide with the nodes of `grid`.
    pub fn check_grid(&self, grid: &TimeGrid) -> Result<(), EphemerisError> {
        if self.len() != grid.n_nodes() {
            return Err(EphemerisError::GridLength {
                expected: grid.n_nodes(),
                found: self.len(),
            });
        }
        let tol = SPACING_RTOL * grid.dt.abs().max(grid.horizon().abs());
        for (i, t) in self.epochs.iter().enumerate() {
            let expected = grid.time(i);
            if (t - expected).abs() > tol.max(1e-12) {
                return Err(EphemerisError::GridMismatch {
                    index: i,
                    expected,
                    found: *t,
                });
            }
        }
        Ok(())
    }

    pub fn from_trajectory(traj: &Trajectory) -> Self {
        Self {
            epochs: traj.grid.times().collect(),
            r_bar: traj.states.iter().map(|s| s.r).collect(),
            v_bar: traj.states.iter().map(|s| s.v).collect(),
        }
    }
}

fn parse_field(line: u64, raw: &str) -> Result<f64, EphemerisError> {
    let v: f64 = raw.trim().parse().map_err(|_| EphemerisError::BadNumber {
        line,
        field: raw.to_string(),
    })?;
    if !v.is_finite() {
        return Err(EphemerisError::NonFinite { line });
    }
    Ok(v)
}

/// Parses and validates an ephemeris CSV stream.
pub fn load_ephemeris<R: Read>(source: R) -> Result<TargetEphemeris, EphemerisError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let mut records = rdr.records();
    let header = records.next().ok_or(EphemerisError::TooShort(0))??;
    if header.len() != EPHEMERIS_HEADER.len()
        || header.iter().zip(EPHEMERIS_HEADER).any(|(a, b)| a != b)
    {
        return Err(EphemerisError::BadHeader);
    }

    let mut eph = TargetEphemeris {
        epochs: Vec::new(),
        r_bar: Vec::new(),
        v_bar: Vec::new(),
    };
    let mut expected_dt = None;
    for rec in records {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != 7 {
            return Err(EphemerisError::FieldCount {
                line,
                expected: 7,
                found: rec.len(),
            });
        }
        let mut v = [0.0; 7];
        for (k, raw) in rec.iter().enumerate() {
            v[k] = parse_field(line, raw)?;
        }
        let r = Vec3::new(v[1], v[2], v[3]);
        if r.norm() == 0.0 {
            return Err(EphemerisError::ZeroRadius { line });
        }
        if let Some(&prev) = eph.epochs.last() {
            let spacing = v[0] - prev;
            if !(spacing > 0.0) {
                return Err(EphemerisError::NonMonotone { line });
            }
            match expected_dt {
                None => expected_dt = Some(spacing),
                Some(dt) => {
                    if (spacing - dt).abs() > SPACING_RTOL * dt {
                        return Err(EphemerisError::NonUniform {
                            line,
                            spacing,
                            expected: dt,
                        });
                    }
                }
            }
        }
        eph.epochs.push(v[0]);
        eph.r_bar.push(r);
        eph.v_bar.push(Vec3::new(v[4], v[5], v[6]));
    }
    if eph.len() < 2 {
        return Err(EphemerisError::TooShort(eph.len()));
    }
    Ok(eph)
}

pub fn load_ephemeris_file(path: &Path) -> Result<TargetEphemeris, EphemerisError> {
    load_ephemeris(fs::File::open(path)?)
}

/// Writes states in the ephemeris CSV schema. Numbers use the shortest
/// representation that parses back to the same `f64`.
pub fn write_state_csv<W: Write>(
    out: W,
    times: &[f64],
    states: &[State],
) -> Result<(), EphemerisError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EPHEMERIS_HEADER)?;
    for (t, s) in times.iter().zip(states) {
        w.write_record([
            t.to_string(),
            s.r.x.to_string(),
            s.r.y.to_string(),
            s.r.z.to_string(),
            s.v.x.to_string(),
            s.v.y.to_string(),
            s.v.z.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ephemeris<W: Write>(out: W, eph: &TargetEphemeris) -> Result<(), EphemerisError> {
    let states: Vec<State> = (0..eph.len()).map(|i| eph.state(i)).collect();
    write_state_csv(out, &eph.epochs, &states)
}

/// Target ephemeris from unthrusted propagation of `initial_state`.
pub fn generate_keplerian_target(
    initial_state: State,
    grid: &TimeGrid,
    mu: f64,
) -> Result<TargetEphemeris, EphemerisError> {
    let controls = vec![Vec3::ZERO; grid.n_nodes()];
    let traj = dynamics::propagate(initial_state, &controls, grid, mu)?;
    Ok(TargetEphemeris::from_trajectory(&traj))
}

/// Equatorial target orbit at perigee: 6878 km perigee radius, e = 0.02.
pub fn default_target_state(mu: f64) -> State {
    let rp = DEFAULT_TARGET_PERIGEE_KM;
    let e = DEFAULT_TARGET_ECCENTRICITY;
    State::new(
        Vec3::new(rp, 0.0, 0.0),
        Vec3::new(0.0, (mu * (1.0 + e) / rp).sqrt(), 0.0),
    )
}

pub fn default_target(grid: &TimeGrid, mu: f64) -> Result<TargetEphemeris, EphemerisError> {
    generate_keplerian_target(default_target_state(mu), grid, mu)
}

#[derive(Debug, Serialize)]
struct StageSummary<'a> {
    stage: &'a str,
    status: &'a str,
    objective: f64,
    feas_inf_norm: f64,
    stat_inf_norm: f64,
    outer_iters: usize,
    inner_iters: usize,
    wall_time_s: f64,
}

/// Paths of the files written by [`write_outputs`].
#[derive(Debug, Clone)]
pub struct OutputFiles {
    pub trajectory: PathBuf,
    pub control: PathBuf,
    pub distance: PathBuf,
    pub summary: PathBuf,
}

/// Writes `trajectory.csv`, `control.csv`, `distance.csv` and
/// `summary.json` into `out_dir`, creating it if needed.
pub fn write_outputs(plan: &MissionPlan, out_dir: &Path) -> Result<OutputFiles, EphemerisError> {
    fs::create_dir_all(out_dir)?;
    let files = OutputFiles {
        trajectory: out_dir.join("trajectory.csv"),
        control: out_dir.join("control.csv"),
        distance: out_dir.join("distance.csv"),
        summary: out_dir.join("summary.json"),
    };
    let times: Vec<f64> = plan.trajectory.grid.times().collect();

    write_state_csv(
        io::BufWriter::new(fs::File::create(&files.trajectory)?),
        &times,
        &plan.trajectory.states,
    )?;

    let mut w = csv::Writer::from_path(&files.control)?;
    w.write_record(["t_s", "ux_kms2", "uy_kms2", "uz_kms2", "b"])?;
    for (i, t) in times.iter().enumerate() {
        let u = plan.schedule.u[i];
        w.write_record([
            t.to_string(),
            u.x.to_string(),
            u.y.to_string(),
            u.z.to_string(),
            plan.schedule.b[i].to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(&files.distance)?;
    w.write_record([
        "t_s",
        "distance_km",
        "norm_q",
        "distance_l1_km",
        "distance_l2_km",
    ])?;
    for p in &plan.distance_series {
        w.write_record([
            p.t.to_string(),
            p.distance.to_string(),
            p.norm_q.to_string(),
            p.l1.to_string(),
            p.l2.to_string(),
        ])?;
    }
    w.flush()?;

    let stages: Vec<StageSummary> = plan
        .stage_reports
        .iter()
        .map(|(name, r)| StageSummary {
            stage: name,
            status: r.status.as_str(),
            objective: r.objective,
            feas_inf_norm: r.feas_inf_norm,
            stat_inf_norm: r.stat_inf_norm,
            outer_iters: r.outer_iters,
            inner_iters: r.inner_iters,
            wall_time_s: r.wall_time,
        })
        .collect();
    let summary = serde_json::json!({
        "status": plan.status.as_str(),
        "mode": plan.mode.as_str(),
        "config_hash": plan.config.hash(),
        "config": plan.config,
        "relaxed_objective": plan.relaxed_objective,
        "final_objective": plan.final_objective,
        "gap": plan.gap,
        "gap_kind": "local",
        "beta_used": plan.beta_used,
        "active_nodes": plan.schedule.active_count(),
        "max_equality_residual": plan.feasibility.max_equality,
        "max_inequality_violation": plan.feasibility.max_inequality,
        "max_bound_violation": plan.feasibility.max_bound,
        "stages": stages,
        "total_wall_time_s": plan.total_wall_time,
    });
    let mut f = io::BufWriter::new(fs::File::create(&files.summary)?);
    serde_json::to_writer_pretty(&mut f, &summary).map_err(io::Error::other)?;
    writeln!(f)?;
    f.flush()?;
    Ok(files)
}
