//! End-to-end planning: zero-thrust simulation, relaxed solve, rounding of
//! the switches with budget repair, and the fixed-switch re-solve.

use std::time::Instant;

use log::{info, warn};
use serde::Serialize;
use thiserror::Error;

use crate::dynamics::{self, DynamicsError, Trajectory, Vec3};
use crate::ephemeris_io::TargetEphemeris;
use crate::solver::{self, NlpProblem, SolveReport, SolveStatus, SolverError, SolverOptions};
use crate::transcription::{
    self, assemble_point, init_from_sim, lift_to_perspective, stages_of, Mode, NormKind,
    ProblemConfig, TranscribedProblem, TranscriptionError,
};

/// Tolerance of the final-plan feasibility check, in problem units.
pub const FEASIBILITY_TOL: f64 = 1e-6;

/// Scaled feasibility target of the fixed-switch stage. Tighter than the
/// plan tolerance so that exact re-propagation of the controls does not
/// drift out of the band.
pub const FIXED_STAGE_TOL_FEAS: f64 = 1e-9;

/// Fallback thresholds tried when the fixed-switch problem fails.
pub const BETA_LADDER: [f64; 3] = [0.4, 0.3, 0.2];

/// How far the pipeline runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PipelineMode {
    Sim,
    Relax,
    RelaxNoPersp,
    Full,
}

impl PipelineMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PipelineMode::Sim => "sim",
            PipelineMode::Relax => "relax",
            PipelineMode::RelaxNoPersp => "relax-no-persp",
            PipelineMode::Full => "full",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanStatus {
    Success,
    /// The named stage did not produce a usable point.
    Failure(&'static str),
}

impl PlanStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            PlanStatus::Success => "SUCCESS",
            PlanStatus::Failure(_) => "FAILURE",
        }
    }

    pub fn is_success(self) -> bool {
        self == PlanStatus::Success
    }
}

/// Node controls and switches.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlSchedule {
    pub u: Vec<Vec3>,
    pub b: Vec<f64>,
}

impl ControlSchedule {
    pub fn zeros(n_nodes: usize) -> Self {
        Self {
            u: vec![Vec3::ZERO; n_nodes],
            b: vec![0.0; n_nodes],
        }
    }

    /// Number of switches at (or rounding to) one.
    pub fn active_count(&self) -> usize {
        self.b.iter().filter(|b| **b >= 0.5).count()
    }

    pub fn is_integral(&self) -> bool {
        self.b.iter().all(|b| *b == 0.0 || *b == 1.0)
    }
}

/// Chaser-target separation at one node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistancePoint {
    pub t: f64,
    /// Separation in the configured norm, km.
    pub distance: f64,
    pub norm_q: u8,
    pub l1: f64,
    pub l2: f64,
}

/// Worst violations of the final point, in problem units.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct FeasibilityReport {
    pub max_equality: f64,
    pub max_inequality: f64,
    pub max_bound: f64,
}

impl FeasibilityReport {
    pub fn within(&self, tol: f64) -> bool {
        self.max_equality <= tol && self.max_inequality <= tol && self.max_bound <= tol
    }
}

#[derive(Debug, Clone)]
pub struct MissionPlan {
    pub mode: PipelineMode,
    pub config: ProblemConfig,
    pub status: PlanStatus,
    pub trajectory: Trajectory,
    pub schedule: ControlSchedule,
    pub distance_series: Vec<DistancePoint>,
    /// Zero-thrust separation, kept for comparison plots.
    pub sim_distance_series: Vec<DistancePoint>,
    /// Relaxed switch values before rounding.
    pub relaxed_switches: Option<Vec<f64>>,
    pub relaxed_objective: Option<f64>,
    pub final_objective: Option<f64>,
    /// `(final - relaxed) / max(1, |final|)`; local, not certified.
    pub gap: Option<f64>,
    pub beta_used: Option<f64>,
    pub feasibility: FeasibilityReport,
    pub stage_reports: Vec<(String, SolveReport)>,
    pub total_wall_time: f64,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Transcription(#[from] TranscriptionError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Separation series between a chaser trajectory and the target.
pub fn distance_series(
    traj: &Trajectory,
    target: &TargetEphemeris,
    norm: NormKind,
) -> Vec<DistancePoint> {
    traj.states
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let d = s.r - target.r_bar[i];
            DistancePoint {
                t: traj.grid.time(i),
                distance: norm.of(d),
                norm_q: norm.q(),
                l1: d.norm_l1(),
                l2: d.norm(),
            }
        })
        .collect()
}

/// Zero-thrust propagation from the configured initial offset.
pub fn run_sim(
    config: &ProblemConfig,
    target: &TargetEphemeris,
) -> Result<(Trajectory, Vec<DistancePoint>), PipelineError> {
    config.validate().map_err(TranscriptionError::from)?;
    target
        .check_grid(&config.grid)
        .map_err(TranscriptionError::from)?;
    let s0 = config.initial_state(target);
    let zeros = vec![Vec3::ZERO; config.grid.n_nodes()];
    let traj = dynamics::propagate(s0, &zeros, &config.grid, config.mu)?;
    let dist = distance_series(&traj, target, config.norm_q);
    Ok((traj, dist))
}

/// Relaxed solve warm-started from the zero-thrust trajectory.
pub fn solve_relaxed(
    config: &ProblemConfig,
    target: &TargetEphemeris,
    perspective: bool,
    options: &SolverOptions,
) -> Result<(TranscribedProblem, solver::Solution), PipelineError> {
    let (traj, _) = run_sim(config, target)?;
    let mut reports = Vec::new();
    relaxation(config, target, &traj, perspective, options, &mut reports)
}

/// Solves the continuous relaxation from the simulated trajectory. The
/// perspective variant is started from the optimum of the plain one,
/// which it reaches far more reliably than from the coasting arc.
fn relaxation(
    config: &ProblemConfig,
    target: &TargetEphemeris,
    sim_traj: &Trajectory,
    perspective: bool,
    options: &SolverOptions,
    reports: &mut Vec<(String, SolveReport)>,
) -> Result<(TranscribedProblem, solver::Solution), PipelineError> {
    let plain = transcription::build(config, target, Mode::Relaxed, None)?;
    let x0 = init_from_sim(sim_traj, config, Mode::Relaxed)?;
    info!("relaxed stage: {} variables", plain.n_vars());
    let sol = solver::solve(&plain, &x0, options, None)?;
    info!(
        "relaxed: {} objective {:.6e} feas {:.2e}",
        sol.report.status, sol.report.objective, sol.report.feas_inf_norm
    );
    reports.push(("relaxed".to_string(), sol.report.clone()));
    if !perspective {
        return Ok((plain, sol));
    }
    let tightened = transcription::build(config, target, Mode::RelaxedPerspective, None)?;
    let x1 = lift_to_perspective(&plain.layout, &sol.x);
    let sol = solver::solve(&tightened, &x1, options, None)?;
    info!(
        "relaxed_perspective: {} objective {:.6e} feas {:.2e}",
        sol.report.status, sol.report.objective, sol.report.feas_inf_norm
    );
    reports.push(("relaxed_perspective".to_string(), sol.report.clone()));
    Ok((tightened, sol))
}

/// Thresholds relaxed switches at `beta`, then keeps only the `n_budget`
/// largest values if too many survive (ties go to the earlier node).
pub fn round_binaries(b_star: &[f64], beta: f64, n_budget: usize) -> Vec<f64> {
    let mut on: Vec<usize> = (0..b_star.len()).filter(|&i| b_star[i] >= beta).collect();
    if on.len() > n_budget {
        on.sort_by(|&a, &b| b_star[b].total_cmp(&b_star[a]).then(a.cmp(&b)));
        on.truncate(n_budget);
    }
    let mut out = vec![0.0; b_star.len()];
    for i in on {
        out[i] = 1.0;
    }
    out
}

/// Largest violations of `problem`'s equalities, inequality intervals and
/// variable bounds at `x`, in problem units.
pub fn feasibility_report<P: NlpProblem + ?Sized>(problem: &P, x: &[f64]) -> FeasibilityReport {
    let n_eq = problem.n_eq();
    let mut c = vec![0.0; n_eq + problem.n_ineq()];
    problem.constraints(x, &mut c);
    let (ilo, ihi) = problem.inequality_bounds();
    let (lo, hi) = problem.variable_bounds();
    let viol = |v: f64, l: f64, h: f64| (l - v).max(v - h).max(0.0);
    FeasibilityReport {
        max_equality: c[..n_eq].iter().fold(0.0, |a, v| a.max(v.abs())),
        max_inequality: c[n_eq..]
            .iter()
            .zip(ilo.iter().zip(&ihi))
            .fold(0.0, |a, (v, (l, h))| a.max(viol(*v, *l, *h))),
        max_bound: x
            .iter()
            .zip(lo.iter().zip(&hi))
            .fold(0.0, |a, (v, (l, h))| a.max(viol(*v, *l, *h))),
    }
}

/// Like [`feasibility_report`], but the proximity band is measured as a
/// distance in km whatever form its rows take.
pub fn plan_feasibility(problem: &TranscribedProblem, x: &[f64]) -> FeasibilityReport {
    let mut report = feasibility_report(problem, x);
    let n_eq = problem.n_eq();
    let mut c = vec![0.0; n_eq + problem.n_ineq()];
    problem.constraints(x, &mut c);
    let (ilo, ihi) = problem.inequality_bounds();
    let prox_rows: Vec<usize> = (0..problem.n_nodes())
        .flat_map(|i| {
            let r = problem.proximity_row(i);
            [r, r + 1]
        })
        .collect();
    let mut worst = 0.0f64;
    for r in n_eq..c.len() {
        if prox_rows.binary_search(&r).is_ok() {
            continue;
        }
        let k = r - n_eq;
        worst = worst.max((ilo[k] - c[r]).max(c[r] - ihi[k]));
    }
    let cfg = &problem.config;
    for g in problem.proximity_values(x) {
        let (d, lo, hi) = match cfg.norm_q {
            NormKind::L2 => (g.max(0.0).sqrt(), cfg.delta_min, cfg.delta_max),
            NormKind::L1 => (
                g,
                cfg.delta_min,
                cfg.delta_max + 3.0 * cfg.abs_smoothing_eps,
            ),
        };
        worst = worst.max((lo - d).max(d - hi));
    }
    report.max_inequality = worst.max(0.0);
    report
}

/// Rebuilds the decision vector of a fixed-switch problem from its
/// controls by exact propagation, so the dynamics rows hold to rounding.
fn repropagate(
    problem: &TranscribedProblem,
    x: &[f64],
    target: &TargetEphemeris,
) -> Result<(Vec<f64>, Trajectory), DynamicsError> {
    let cfg = &problem.config;
    let controls = problem.controls(x);
    let s0 = cfg.initial_state(target);
    let (traj, stages) = dynamics::propagate_with_stages(s0, &controls, &cfg.grid, cfg.mu)?;
    let b = problem.switches(x);
    let x_new = assemble_point(&problem.layout, &traj.states, &stages, &controls, &b, &[]);
    Ok((x_new, traj))
}

/// Runs the pipeline up to `mode` with the default fallback ladder.
pub fn run_pipeline(
    config: &ProblemConfig,
    target: &TargetEphemeris,
    mode: PipelineMode,
    options: &SolverOptions,
) -> Result<MissionPlan, PipelineError> {
    let start = Instant::now();
    let (sim_traj, sim_dist) = run_sim(config, target)?;
    let n_nodes = config.grid.n_nodes();
    let mut plan = MissionPlan {
        mode,
        config: config.clone(),
        status: PlanStatus::Success,
        trajectory: sim_traj.clone(),
        schedule: ControlSchedule::zeros(n_nodes),
        distance_series: sim_dist.clone(),
        sim_distance_series: sim_dist,
        relaxed_switches: None,
        relaxed_objective: None,
        final_objective: None,
        gap: None,
        beta_used: None,
        feasibility: FeasibilityReport::default(),
        stage_reports: Vec::new(),
        total_wall_time: 0.0,
    };
    if mode == PipelineMode::Sim {
        plan.total_wall_time = start.elapsed().as_secs_f64();
        return Ok(plan);
    }

    let (relaxed, sol) = relaxation(
        config,
        target,
        &sim_traj,
        mode != PipelineMode::RelaxNoPersp,
        options,
        &mut plan.stage_reports,
    )?;
    let relaxed_report = sol.report.clone();
    if relaxed_report.status != SolveStatus::OptimalLocal {
        warn!("relaxation ended with {}", relaxed_report.status);
    }
    let b_star = relaxed.switches(&sol.x);
    plan.relaxed_switches = Some(b_star.clone());
    plan.relaxed_objective = Some(relaxed.objective(&sol.x));

    if mode != PipelineMode::Full {
        plan.trajectory = relaxed.trajectory(&sol.x);
        plan.schedule = ControlSchedule {
            u: relaxed.controls(&sol.x),
            b: b_star,
        };
        plan.distance_series = distance_series(&plan.trajectory, target, config.norm_q);
        plan.feasibility = plan_feasibility(&relaxed, &sol.x);
        if relaxed_report.status != SolveStatus::OptimalLocal {
            plan.status = PlanStatus::Failure("relaxed");
        }
        plan.total_wall_time = start.elapsed().as_secs_f64();
        return Ok(plan);
    }

    let mut tried: Vec<Vec<f64>> = Vec::new();
    let ladder = std::iter::once(config.beta)
        .chain(BETA_LADDER.iter().copied().filter(|b| *b < config.beta));
    let mut success = false;
    for beta in ladder {
        let b_round = round_binaries(&b_star, beta, config.n_budget);
        if tried.contains(&b_round) {
            continue;
        }
        tried.push(b_round.clone());
        let fixed = transcription::build(config, target, Mode::FixedBinary, Some(&b_round))?;
        // Warm start: the relaxed point restricted to the shared blocks,
        // with the controls pulled into the new boxes.
        let (lo, hi) = fixed.variable_bounds();
        let xf0: Vec<f64> = (0..fixed.n_vars())
            .map(|j| sol.x[j].clamp(lo[j], hi[j]))
            .collect();
        let fixed_options = SolverOptions {
            tol_feas: options.tol_feas.min(FIXED_STAGE_TOL_FEAS),
            ..options.clone()
        };
        let fsol = solver::solve(&fixed, &xf0, &fixed_options, None)?;
        let name = format!("fixed_binary(beta={beta})");
        info!(
            "{name}: {} objective {:.6e} feas {:.2e}",
            fsol.report.status, fsol.report.objective, fsol.report.feas_inf_norm
        );
        plan.stage_reports.push((name, fsol.report.clone()));
        if fsol.report.status == SolveStatus::Error {
            continue;
        }
        let (x_final, traj) = repropagate(&fixed, &fsol.x, target)?;
        let feas = plan_feasibility(&fixed, &x_final);
        if !feas.within(FEASIBILITY_TOL) {
            warn!("fixed-switch point infeasible at beta={beta}: {feas:?}");
            plan.feasibility = feas;
            continue;
        }
        let final_obj = fixed.objective(&x_final);
        let relaxed_obj = plan.relaxed_objective.unwrap_or(0.0);
        plan.trajectory = traj;
        plan.schedule = ControlSchedule {
            u: fixed.controls(&x_final),
            b: b_round,
        };
        plan.distance_series = distance_series(&plan.trajectory, target, config.norm_q);
        plan.final_objective = Some(final_obj);
        plan.gap = Some((final_obj - relaxed_obj) / final_obj.abs().max(1.0));
        plan.beta_used = Some(beta);
        plan.feasibility = feas;
        success = true;
        break;
    }
    if !success {
        plan.status = PlanStatus::Failure("fixed_binary");
    }
    plan.total_wall_time = start.elapsed().as_secs_f64();
    Ok(plan)
}

/// Stage values of a plan's trajectory, for consumers that rebuild a
/// decision vector from a plan.
pub fn plan_stages(plan: &MissionPlan) -> Result<Vec<dynamics::StageBlock>, DynamicsError> {
    stages_of(&plan.trajectory, &plan.schedule.u, plan.config.mu)
}
