//! Command-line front end.
//!
//! The configuration file is a flat `key = value` text file whose keys are
//! the [`ProblemConfig`] field names, with the time grid flattened into
//! `t0`, `dt` and `n_intervals` and vectors written as three
//! comma-separated numbers. `#` starts a comment. Command-line overrides
//! are applied after the file.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use log::{warn, LevelFilter};
use thiserror::Error;

use crate::dynamics::{TimeGrid, Vec3};
use crate::ephemeris_io::{self, EphemerisError, TargetEphemeris};
use crate::pipeline::{self, MissionPlan, PipelineMode, PlanStatus};
use crate::solver::SolverOptions;
use crate::transcription::{ConfigError, NormKind, ProblemConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Sim,
    Relax,
    RelaxNoPersp,
    Full,
}

impl From<ModeArg> for PipelineMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Sim => PipelineMode::Sim,
            ModeArg::Relax => PipelineMode::Relax,
            ModeArg::RelaxNoPersp => PipelineMode::RelaxNoPersp,
            ModeArg::Full => PipelineMode::Full,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LogLevel {
    Off,
    Error,
    Warn,
    Info,
    Debug,
    Trace,
}

impl From<LogLevel> for LevelFilter {
    fn from(l: LogLevel) -> Self {
        match l {
            LogLevel::Off => LevelFilter::Off,
            LogLevel::Error => LevelFilter::Error,
            LogLevel::Warn => LevelFilter::Warn,
            LogLevel::Info => LevelFilter::Info,
            LogLevel::Debug => LevelFilter::Debug,
            LogLevel::Trace => LevelFilter::Trace,
        }
    }
}

/// Plan a thruster schedule that keeps a chaser inside a distance band
/// around a target trajectory.
#[derive(Debug, Clone, Parser)]
#[command(name = "orbtrack", version)]
struct Args {
    /// Flat key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Target ephemeris CSV; the built-in elliptical target when omitted.
    #[arg(long)]
    target: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "full")]
    mode: ModeArg,
    /// Number of intervals N.
    #[arg(long)]
    n: Option<usize>,
    /// Step length in seconds.
    #[arg(long)]
    dt: Option<f64>,
    /// Rounding threshold.
    #[arg(long)]
    beta: Option<f64>,
    /// Proximity norm, 1 or 2.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    norm: Option<u8>,
    /// Maximum number of active thrust nodes.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long, value_enum, default_value = "warn")]
    log_level: LogLevel,
}

/// Command-line values that replace configuration entries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub n: Option<usize>,
    pub dt: Option<f64>,
    pub beta: Option<f64>,
    pub norm_q: Option<NormKind>,
    pub n_budget: Option<usize>,
}

/// Everything one invocation needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub config_path: Option<PathBuf>,
    pub target_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub mode: PipelineMode,
    pub overrides: Overrides,
    pub log_level: LevelFilter,
}

#[derive(Debug, Error)]
pub enum CliError {
    /// Help or version text that should go to stdout with a zero exit.
    #[error("{0}")]
    Info(String),
    #[error("{0}")]
    Usage(String),
    #[error("config file {path}: {source}")]
    ConfigFile {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("config: {0}")]
    ConfigParse(#[from] ConfigParseError),
    #[error("config: {0}")]
    ConfigInvalid(#[from] ConfigError),
    #[error("target: {0}")]
    Target(#[source] EphemerisError),
    #[error("writing outputs: {0}")]
    Output(#[source] EphemerisError),
    #[error("pipeline: {0}")]
    Pipeline(#[from] pipeline::PipelineError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Info(_) => EXIT_OK,
            CliError::Usage(_) => EXIT_USAGE,
            CliError::ConfigFile { .. }
            | CliError::ConfigParse(_)
            | CliError::ConfigInvalid(_)
            | CliError::Target(_)
            | CliError::Output(_) => EXIT_INPUT,
            CliError::Pipeline(_) => EXIT_SOLVER,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigParseError {
    #[error("line {line}: expected `key = value`")]
    MissingEquals { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given twice")]
    Duplicate { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {reason}")]
    BadValue {
        line: usize,
        key: String,
        reason: String,
    },
}

/// Parses command-line arguments (including the program name).
pub fn parse_args<I, T>(argv: I) -> Result<RunSpec, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = Args::try_parse_from(argv).map_err(|e| {
        use clap::error::ErrorKind;
        match e.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => CliError::Info(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    })?;
    let norm_q = args
        .norm
        .map(|q| NormKind::try_from(q).map_err(CliError::Usage))
        .transpose()?;
    Ok(RunSpec {
        config_path: args.config,
        target_path: args.target,
        out_dir: args.out,
        mode: args.mode.into(),
        overrides: Overrides {
            n: args.n,
            dt: args.dt,
            beta: args.beta,
            norm_q,
            n_budget: args.budget,
        },
        log_level: args.log_level.into(),
    })
}

const CONFIG_KEYS: [&str; 14] = [
    "mu",
    "t0",
    "dt",
    "n_intervals",
    "delta_min",
    "delta_max",
    "delta0",
    "u_min",
    "u_max",
    "n_budget",
    "norm_q",
    "beta",
    "abs_smoothing_eps",
    "nondimensional_scaling",
];

/// Parses the flat configuration text on top of the defaults. The result
/// is not validated; see [`ProblemConfig::validate`].
pub fn parse_config(text: &str) -> Result<ProblemConfig, ConfigParseError> {
    let mut cfg = ProblemConfig::default();
    let mut seen: Vec<&str> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or(ConfigParseError::MissingEquals { line })?;
        let key = key.trim();
        let value = value.trim();
        let Some(&known) = CONFIG_KEYS.iter().find(|k| **k == key) else {
            return Err(ConfigParseError::UnknownKey {
                line,
                key: key.to_string(),
            });
        };
        if seen.contains(&known) {
            return Err(ConfigParseError::Duplicate {
                line,
                key: key.to_string(),
            });
        }
        seen.push(known);
        let bad = |reason: &str| ConfigParseError::BadValue {
            line,
            key: key.to_string(),
            reason: reason.to_string(),
        };
        let real = || -> Result<f64, ConfigParseError> {
            let v: f64 = value.parse().map_err(|_| bad("not a number"))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(bad("not finite"))
            }
        };
        let count = || -> Result<usize, ConfigParseError> {
            value.parse().map_err(|_| bad("not a nonnegative integer"))
        };
        let vector = || -> Result<Vec3, ConfigParseError> {
            let parts: Vec<&str> = value.split(',').map(str::trim).collect();
            if parts.len() != 3 {
                return Err(bad("expected three comma-separated numbers"));
            }
            let mut v = [0.0f64; 3];
            for (slot, p) in v.iter_mut().zip(&parts) {
                *slot = p.parse().map_err(|_| bad("not a number"))?;
                if !slot.is_finite() {
                    return Err(bad("not finite"));
                }
            }
            Ok(Vec3::new(v[0], v[1], v[2]))
        };
        match known {
            "mu" => cfg.mu = real()?,
            "t0" => cfg.grid.t0 = real()?,
            "dt" => cfg.grid.dt = real()?,
            "n_intervals" => cfg.grid.n_intervals = count()?,
            "delta_min" => cfg.delta_min = real()?,
            "delta_max" => cfg.delta_max = real()?,
            "delta0" => cfg.delta0 = vector()?,
            "u_min" => cfg.u_min = vector()?,
            "u_max" => cfg.u_max = vector()?,
            "n_budget" => cfg.n_budget = count()?,
            "norm_q" => {
                let q: u8 = value.parse().map_err(|_| bad("expected 1 or 2"))?;
                cfg.norm_q = NormKind::try_from(q).map_err(|e| bad(&e))?;
            }
            "beta" => cfg.beta = real()?,
            "abs_smoothing_eps" => cfg.abs_smoothing_eps = real()?,
            "nondimensional_scaling" => {
                cfg.nondimensional_scaling = match value {
                    "true" | "1" => true,
                    "false" | "0" => false,
                    _ => return Err(bad("expected true or false")),
                }
            }
            _ => unreachable!("key list and match arms agree"),
        }
    }
    Ok(cfg)
}

/// Config file (or defaults) with the overrides applied, validated.
pub fn resolve_config(spec: &RunSpec) -> Result<ProblemConfig, CliError> {
    let mut cfg = match &spec.config_path {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|source| CliError::ConfigFile {
                path: path.clone(),
                source,
            })?;
            parse_config(&text)?
        }
        None => ProblemConfig::default(),
    };
    let o = &spec.overrides;
    if let Some(n) = o.n {
        cfg.grid.n_intervals = n;
    }
    if let Some(dt) = o.dt {
        cfg.grid.dt = dt;
    }
    if let Some(beta) = o.beta {
        cfg.beta = beta;
    }
    if let Some(q) = o.norm_q {
        cfg.norm_q = q;
    }
    if let Some(nb) = o.n_budget {
        cfg.n_budget = nb;
    }
    // A budget above the node count never binds; clamp it so that grid
    // overrides alone do not make the default budget invalid.
    let nodes = cfg.grid.n_intervals.saturating_add(1);
    if cfg.grid.n_intervals > 0 && cfg.n_budget > nodes {
        warn!(
            "budget {} exceeds the {nodes} nodes; using {nodes}",
            cfg.n_budget
        );
        cfg.n_budget = nodes;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Loads the target named in `spec`, or generates the built-in one.
pub fn resolve_target(spec: &RunSpec, cfg: &ProblemConfig) -> Result<TargetEphemeris, CliError> {
    let target = match &spec.target_path {
        Some(path) => ephemeris_io::load_ephemeris_file(path).map_err(CliError::Target)?,
        None => ephemeris_io::default_target(&cfg.grid, cfg.mu).map_err(CliError::Target)?,
    };
    target.check_grid(&cfg.grid).map_err(CliError::Target)?;
    Ok(target)
}

/// Runs one invocation and returns the process exit code. Messages go to
/// `err`; help and version text to `out`.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let spec = match parse_args(argv) {
        Ok(s) => s,
        Err(CliError::Info(text)) => {
            let _ = write!(out, "{text}");
            return EXIT_OK;
        }
        Err(e) => {
            let _ = write!(err, "{e}");
            return e.exit_code();
        }
    };
    let _ = env_logger::Builder::new()
        .filter_level(spec.log_level)
        .target(env_logger::Target::Stderr)
        .try_init();
    match execute(&spec, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn execute(spec: &RunSpec, err: &mut dyn Write) -> Result<i32, CliError> {
    let cfg = resolve_config(spec)?;
    let target = resolve_target(spec, &cfg)?;
    let plan = pipeline::run_pipeline(&cfg, &target, spec.mode, &SolverOptions::default())?;
    ephemeris_io::write_outputs(&plan, &spec.out_dir).map_err(CliError::Output)?;
    let _ = write_summary(err, &plan, &spec.out_dir);
    Ok(match plan.status {
        PlanStatus::Success => EXIT_OK,
        PlanStatus::Failure(stage) => {
            let status = plan
                .stage_reports
                .iter()
                .rev()
                .find(|(name, _)| name.starts_with(stage))
                .map(|(_, r)| r.status.as_str())
                .unwrap_or("NOT_RUN");
            let _ = writeln!(err, "failure: stage {stage} ended with {status}");
            EXIT_SOLVER
        }
    })
}

fn write_summary(w: &mut dyn Write, plan: &MissionPlan, out_dir: &Path) -> io::Result<()> {
    let grid: TimeGrid = plan.config.grid;
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6e}"));
    let band = |series: &[pipeline::DistancePoint]| {
        let lo = series
            .iter()
            .map(|p| p.distance)
            .fold(f64::INFINITY, f64::min);
        let hi = series
            .iter()
            .map(|p| p.distance)
            .fold(f64::NEG_INFINITY, f64::max);
        format!("[{lo:.3}, {hi:.3}] km")
    };
    writeln!(
        w,
        "orbtrack {} | {}",
        plan.mode.as_str(),
        plan.status.as_str()
    )?;
    writeln!(
        w,
        "  grid            N = {}, dt = {} s, horizon {} s",
        grid.n_intervals,
        grid.dt,
        grid.horizon()
    )?;
    writeln!(
        w,
        "  band            [{}, {}] km, q = {}",
        plan.config.delta_min,
        plan.config.delta_max,
        plan.config.norm_q.q()
    )?;
    writeln!(w, "  coasting range  {}", band(&plan.sim_distance_series))?;
    writeln!(w, "  plan range      {}", band(&plan.distance_series))?;
    writeln!(w, "  relaxed obj     {}", opt(plan.relaxed_objective))?;
    writeln!(w, "  final obj       {}", opt(plan.final_objective))?;
    writeln!(w, "  gap (local)     {}", opt(plan.gap))?;
    if let Some(beta) = plan.beta_used {
        writeln!(w, "  beta used       {beta}")?;
    }
    writeln!(
        w,
        "  active nodes    {} of {} (budget {})",
        plan.schedule.active_count(),
        grid.n_nodes(),
        plan.config.n_budget
    )?;
    writeln!(
        w,
        "  feasibility     eq {:.2e}, ineq {:.2e}, bounds {:.2e}",
        plan.feasibility.max_equality, plan.feasibility.max_inequality, plan.feasibility.max_bound
    )?;
    for (name, r) in &plan.stage_reports {
        writeln!(
            w,
            "  stage {:<24} {:<16} outer {:>3} inner {:>5} {:>8.2} s",
            name,
            r.status.as_str(),
            r.outer_iters,
            r.inner_iters,
            r.wall_time
        )?;
    }
    writeln!(w, "  total time      {:.2} s", plan.total_wall_time)?;
    writeln!(w, "  outputs         {}", out_dir.display())
}
