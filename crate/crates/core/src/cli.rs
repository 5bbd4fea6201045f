//! Command-line front end: JSON run configurations, the five commands and
//! their exit codes.
//!
//! Exit codes: 0 success, 1 usage, configuration or I/O error, 2 solver
//! non-convergence, 3 a condition check failed, 4 cone sampling accepted no
//! direction.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::adjoint::{MeasurePair, SignMode};
use crate::calculus::{gradient_check, GradCheckOptions, GradCheckReport};
use crate::conditions::{
    check_kkt, check_slater, quadratic_growth_probe, CriticalCone, GrowthReport, KktReport, KktTolerances, SscReport,
};
use crate::convergence::{convergence_study, ConvergenceTable, Isolate};
use crate::error::{Error, Result};
use crate::grid::{GridFunction, Grids};
use crate::io::{read_grid_function, read_spatial_field, write_grid_function, write_json, write_spatial_field};
use crate::optimizer::{feasibility, solve_ocp, stationarity, KktTriplet, SolveOpts, StageRecord};
use crate::presets;
use crate::problem::{
    ControlBounds, Convection, Nonlinearity, ProblemSpec, RunningCost, SpaceTimeField, StateConstraint,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_CHECK_FAILED: i32 = 3;
pub const EXIT_EMPTY_SAMPLE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "parabolic-ocp", version, about = "Solve and verify parabolic optimal control problems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output.directory`.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Random seed; overrides `seed`.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Print nothing on success.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Run the penalty path and write the control, state, adjoint and multipliers.
    Solve,
    /// Check the first-order conditions for the triplet in the output directory.
    CheckKkt,
    /// Sample the critical cone and evaluate the second-order condition.
    CheckSsc,
    /// Compare adjoint gradients with central differences.
    Gradcheck,
    /// Grid refinement study against an exact state.
    Convergence,
}

/// A field given either as a number or as an expression in `x`, `y`, `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldExpr {
    Constant(f64),
    Expr(String),
}

impl FieldExpr {
    pub fn build(&self) -> Result<SpaceTimeField> {
        match self {
            FieldExpr::Constant(c) => Ok(SpaceTimeField::constant(*c)),
            FieldExpr::Expr(s) => SpaceTimeField::from_expr(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NonlinearityConfig {
    Zero,
    Linear { rate: f64 },
    Cubic { coefficient: f64 },
    Exp { weight: FieldExpr },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RunningCostConfig {
    Zero,
    Tracking {
        target: FieldExpr,
        #[serde(default = "one")]
        weight: f64,
    },
}

/// `{"upper": γ}` or `{"lower": γ_min, "upper": γ_max}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateConstraintConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    pub upper: f64,
}

/// Problem data: an optional preset with field-by-field overrides. Without
/// a preset the base is the unit domain with `T = 1`, `a = I`, `ν = 1`,
/// `u ∈ [0, 1]`, `y ≤ 1` and `y_0 = 0`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lengths: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diffusion: Option<[[f64; 2]; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub convection: Option<[FieldExpr; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nonlinearity: Option<NonlinearityConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub running_cost: Option<RunningCostConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    /// `[α, β]`; `null` stands for an infinite bound.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bounds: Option<[Option<f64>; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state_constraint: Option<StateConstraintConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<FieldExpr>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lp_exponent: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub monotonicity_floor: Option<f64>,
}

impl ProblemConfig {
    pub fn dim(&self) -> usize {
        self.dim
            .or_else(|| self.lengths.as_ref().map(|l| l.len()))
            .unwrap_or(1)
    }

    /// Builds and validates the problem.
    pub fn build(&self) -> Result<ProblemSpec> {
        let dim = self.dim();
        if let Some(l) = &self.lengths {
            if l.len() != dim {
                return Err(Error::Config(format!("`lengths` has {} entries for dimension {dim}", l.len())));
            }
        }
        let mut spec = match &self.preset {
            Some(name) => presets::by_name(name, dim)?,
            None => ProblemSpec::unit(dim),
        };
        if let Some(l) = &self.lengths {
            spec.lengths = l.clone();
        }
        if let Some(t) = self.horizon {
            spec.horizon = t;
        }
        if let Some(a) = self.diffusion {
            spec = spec.with_diffusion(a);
        }
        if let Some([b1, b2]) = &self.convection {
            let convection = match (b1, b2) {
                (FieldExpr::Constant(a), FieldExpr::Constant(b)) => Convection::Constant([*a, *b]),
                _ => {
                    let (f1, f2) = (b1.build()?, b2.build()?);
                    Convection::Field {
                        label: format!("({}, {})", f1.label(), f2.label()),
                        func: Arc::new(move |x, t| [f1.eval(x, t), f2.eval(x, t)]),
                    }
                }
            };
            spec = spec.with_convection(convection);
        }
        if let Some(f) = &self.nonlinearity {
            spec = spec.with_nonlinearity(match f {
                NonlinearityConfig::Zero => Nonlinearity::Zero,
                NonlinearityConfig::Linear { rate } => Nonlinearity::LinearRate { rate: *rate },
                NonlinearityConfig::Cubic { coefficient } => Nonlinearity::CubicOdd {
                    coefficient: *coefficient,
                },
                NonlinearityConfig::Exp { weight } => Nonlinearity::ExpWeighted { weight: weight.build()? },
            });
        }
        if let Some(l) = &self.running_cost {
            spec = spec.with_running_cost(match l {
                RunningCostConfig::Zero => RunningCost::Zero,
                RunningCostConfig::Tracking { target, weight } => RunningCost::Tracking {
                    target: target.build()?,
                    weight: *weight,
                },
            });
        }
        if let Some(nu) = self.nu {
            spec = spec.with_nu(nu);
        }
        if let Some([a, b]) = self.bounds {
            spec.bounds = ControlBounds::new(a.unwrap_or(f64::NEG_INFINITY), b.unwrap_or(f64::INFINITY));
        }
        if let Some(c) = self.state_constraint {
            spec = spec.with_state_constraint(match c.lower {
                None => StateConstraint::Upper { gamma: c.upper },
                Some(lower) => StateConstraint::Bilateral { lower, upper: c.upper },
            });
        }
        if let Some(y0) = &self.initial_state {
            spec = spec.with_initial_state(y0.build()?);
        }
        if let Some(p) = self.lp_exponent {
            spec.lp_exponent = p;
        }
        if let Some(c) = self.monotonicity_floor {
            spec.monotonicity_floor = c;
        }
        spec.ensure_valid()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Nodes per axis including the boundary; defaults to 33 in one
    /// dimension and 17 per axis in two.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nodes: Option<Vec<usize>>,
    /// Time steps `N_t`; defaults to 32.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
}

impl GridConfig {
    pub fn resolve(&mut self, dim: usize) {
        self.nodes.get_or_insert_with(|| vec![if dim == 1 { 33 } else { 17 }; dim]);
        self.steps.get_or_insert(32);
    }

    pub fn build(&self, spec: &ProblemSpec) -> Result<Grids> {
        let nodes = self.nodes.clone().unwrap_or_default();
        if nodes.len() != spec.dim() {
            return Err(Error::Config(format!(
                "`grid.nodes` has {} entries for dimension {}",
                nodes.len(),
                spec.dim()
            )));
        }
        spec.grids(&nodes, self.steps.unwrap_or(32))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConditionsConfig {
    /// Cone parameters `τ` for `check-ssc`.
    pub tau: Vec<f64>,
    pub n_samples: usize,
    pub active_tol: f64,
    pub tolerances: KktTolerances,
    /// Control `u₀` for the linearized Slater margin in `check-kkt`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slater_control: Option<FieldExpr>,
    /// Radii of the quadratic growth probe in `check-ssc`; empty skips it.
    pub growth_radii: Vec<f64>,
    pub growth_samples: usize,
}

impl Default for ConditionsConfig {
    fn default() -> Self {
        ConditionsConfig {
            tau: vec![0.0],
            n_samples: 200,
            active_tol: 1e-6,
            tolerances: KktTolerances::default(),
            slater_control: None,
            growth_radii: Vec::new(),
            growth_samples: 8,
        }
    }
}

/// Measure for the Lagrangian gradient check, as densities: nodal masses
/// are `interior(x, t)` times the space-time cell weight and
/// `terminal(x)` times the cell volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureConfig {
    pub interior: FieldExpr,
    #[serde(default = "zero_field")]
    pub terminal: FieldExpr,
}

fn zero_field() -> FieldExpr {
    FieldExpr::Constant(0.0)
}

impl MeasureConfig {
    pub fn build(&self, spec: &ProblemSpec, grids: &Grids) -> Result<MeasurePair> {
        let q = self.interior.build()?;
        let w = self.terminal.build()?;
        let mut mass_q = GridFunction::from_fn(grids, |x, t| q.eval(x, t));
        for k in 0..grids.levels() {
            let c = grids.weight(k) * grids.space.cell_volume();
            mass_q.level_mut(k).iter_mut().for_each(|v| *v *= c);
        }
        let vol = grids.space.cell_volume();
        let mut mass_terminal = crate::grid::SpatialField::from_fn(&grids.space, |x| w.eval(x, spec.horizon));
        mass_terminal.values.iter_mut().for_each(|v| *v *= vol);
        MeasurePair::new(grids, mass_q, mass_terminal, sign_mode(spec))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub directions: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Test hook: scales the adjoint, so anything but 1 must fail.
    pub adjoint_scale: f64,
    /// Control at which the gradient is checked.
    pub control: FieldExpr,
    /// When present the Lagrangian is checked instead of `J`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measure: Option<MeasureConfig>,
}

impl GradcheckConfig {
    pub fn options(&self) -> GradCheckOptions {
        GradCheckOptions {
            directions: self.directions,
            step: self.step,
            tolerance: self.tolerance,
            adjoint_scale: self.adjoint_scale,
        }
    }
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        let o = GradCheckOptions::default();
        GradcheckConfig {
            directions: o.directions,
            step: o.step,
            tolerance: o.tolerance,
            adjoint_scale: o.adjoint_scale,
            control: FieldExpr::Constant(0.0),
            measure: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelConfig {
    pub nodes: usize,
    pub steps: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceConfig {
    /// Nested levels; `nodes` applies to every axis.
    pub levels: Vec<LevelConfig>,
    /// Source term; defaults to the manufactured preset's.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub control: Option<FieldExpr>,
    /// Exact state; defaults to the manufactured preset's.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact: Option<FieldExpr>,
    pub isolate: Isolate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    /// Field files.
    Text,
    /// Reports.
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: PathBuf::from("out"),
            formats: vec![Format::Text, Format::Json],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub grid: GridConfig,
    pub solver: SolveOpts,
    pub conditions: ConditionsConfig,
    pub gradcheck: GradcheckConfig,
    pub convergence: ConvergenceConfig,
    pub output: OutputConfig,
    pub seed: u64,
}

impl RunConfig {
    /// Parses JSON; errors carry the line and column.
    pub fn from_json(text: &str) -> Result<RunConfig> {
        serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("line {} column {}: {e}", e.line(), e.column())))
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        RunConfig::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Fills defaults that depend on other fields and applies overrides.
    pub fn resolve(&mut self, out: Option<PathBuf>, seed: Option<u64>) {
        if let Some(o) = out {
            self.output.directory = o;
        }
        if let Some(s) = seed {
            self.seed = s;
        }
        let dim = self.problem.dim();
        self.grid.resolve(dim);
    }

    fn writes(&self, f: Format) -> bool {
        self.output.formats.contains(&f)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.output.directory.join(name)
    }
}

fn sign_mode(spec: &ProblemSpec) -> SignMode {
    if spec.state_constraint.is_bilateral() {
        SignMode::Signed
    } else {
        SignMode::Nonnegative
    }
}

pub const FIELD_FILES: [&str; 5] = ["u.txt", "y.txt", "phi.txt", "mu_q.txt", "mu_terminal.txt"];

pub fn write_triplet(dir: &Path, grids: &Grids, t: &KktTriplet) -> Result<()> {
    write_grid_function(&dir.join("u.txt"), grids, &t.u)?;
    write_grid_function(&dir.join("y.txt"), grids, &t.y)?;
    write_grid_function(&dir.join("phi.txt"), grids, &t.phi)?;
    write_grid_function(&dir.join("mu_q.txt"), grids, &t.measure.mass_q)?;
    write_spatial_field(&dir.join("mu_terminal.txt"), grids, &t.measure.mass_terminal)?;
    write_json(&dir.join("history.json"), &t.history)
}

/// Reads the files written by [`write_triplet`]. The history file is
/// optional. Masses are taken as written, so sign errors reach the checker.
pub fn read_triplet(dir: &Path, spec: &ProblemSpec, grids: &Grids) -> Result<KktTriplet> {
    let u = read_grid_function(&dir.join("u.txt"), grids)?;
    let y = read_grid_function(&dir.join("y.txt"), grids)?;
    let phi = read_grid_function(&dir.join("phi.txt"), grids)?;
    let mass_q = read_grid_function(&dir.join("mu_q.txt"), grids)?;
    let mass_terminal = read_spatial_field(&dir.join("mu_terminal.txt"), grids)?;
    let hp = dir.join("history.json");
    let history: Vec<StageRecord> = match fs::read_to_string(&hp) {
        Ok(s) => serde_json::from_str(&s).map_err(|e| Error::Io {
            path: hp.display().to_string(),
            message: e.to_string(),
        })?,
        Err(_) => Vec::new(),
    };
    Ok(KktTriplet {
        u,
        y,
        phi,
        measure: MeasurePair {
            mass_q,
            mass_terminal,
            sign_mode: sign_mode(spec),
        },
        history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    Stalled,
}

#[derive(Debug, Serialize)]
pub struct SolveReport<'a> {
    pub config: &'a RunConfig,
    pub status: SolveStatus,
    pub stages: usize,
    pub stationarity: Option<f64>,
    pub feasibility: f64,
    pub objective: Option<f64>,
    pub total_variation: Option<f64>,
    /// `‖φ̄‖_∞`, for watching the adjoint under refinement.
    pub adjoint_sup: Option<f64>,
    pub state_energy: Option<f64>,
    pub unchecked_assumptions: Vec<&'static str>,
    pub history: &'a [StageRecord],
}

#[derive(Debug, Serialize)]
pub struct KktCommandReport<'a> {
    pub config: &'a RunConfig,
    pub report: KktReport,
}

#[derive(Debug, Serialize)]
pub struct SscCommandReport<'a> {
    pub config: &'a RunConfig,
    pub reports: Vec<SscReport>,
    pub growth: Option<GrowthReport>,
    pub pass: bool,
}

#[derive(Debug, Serialize)]
pub struct GradcheckCommandReport<'a> {
    pub config: &'a RunConfig,
    pub report: GradCheckReport,
}

#[derive(Debug, Serialize)]
pub struct ConvergenceCommandReport<'a> {
    pub config: &'a RunConfig,
    pub table: ConvergenceTable,
    pub min_order_h: Option<f64>,
    pub min_order_dt: Option<f64>,
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::PathStalled { .. } | Error::NewtonDiverged { .. } | Error::LineSearchFailure { .. } => {
            EXIT_NOT_CONVERGED
        }
        Error::EmptySample { .. } => EXIT_EMPTY_SAMPLE,
        _ => EXIT_USAGE,
    }
}

struct Ctx {
    config: RunConfig,
    quiet: bool,
}

impl Ctx {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }

    fn report(&self, name: &str, value: &impl Serialize) -> Result<()> {
        if self.config.writes(Format::Json) {
            write_json(&self.config.path(name), value)?;
        }
        Ok(())
    }

    fn problem(&self) -> Result<(ProblemSpec, Grids)> {
        let spec = self.config.problem.build()?;
        let grids = self.config.grid.build(&spec)?;
        Ok((spec, grids))
    }
}

fn cmd_solve(ctx: &Ctx) -> Result<i32> {
    let (spec, grids) = ctx.problem()?;
    let cfg = &ctx.config;
    let (triplet, status) = match solve_ocp(&spec, &grids, &cfg.solver) {
        Ok(t) => (Some(t), SolveStatus::Converged),
        Err(Error::PathStalled { best, stages, violation }) => {
            log::warn!("penalty path stalled after {stages} stage(s), violation {violation:.3e}");
            (best.map(|b| *b), SolveStatus::Stalled)
        }
        Err(e) => return Err(e),
    };
    if let (Some(t), true) = (&triplet, cfg.writes(Format::Text)) {
        write_triplet(&cfg.output.directory, &grids, t)?;
    }
    let empty = Vec::new();
    let history = triplet.as_ref().map_or(&empty, |t| &t.history);
    let feas = match &triplet {
        Some(t) => feasibility(&spec, &t.y),
        None => {
            let y = crate::forward::solve_state(
                &spec,
                &grids,
                &GridFunction::constant(&grids, spec.bounds.clamp(0.0)),
                &cfg.solver.forward,
            )?
            .y;
            feasibility(&spec, &y)
        }
    };
    let report = SolveReport {
        config: cfg,
        status,
        stages: history.len(),
        stationarity: triplet.as_ref().map(|t| stationarity(&spec, &t.u, &t.phi)),
        feasibility: feas,
        objective: triplet
            .as_ref()
            .map(|t| crate::calculus::objective_from_state(&spec, &grids, &t.u, &t.y)),
        total_variation: triplet.as_ref().map(|t| t.measure.total_variation()),
        adjoint_sup: triplet.as_ref().map(|t| t.phi.max_abs()),
        state_energy: triplet
            .as_ref()
            .map(|t| crate::forward::state_energy(&spec, &grids, &t.y))
            .transpose()?,
        unchecked_assumptions: spec.unchecked_assumptions(),
        history,
    };
    ctx.report("solve_report.json", &report)?;
    match status {
        SolveStatus::Converged => {
            ctx.say(format!(
                "solve: converged in {} stage(s), feasibility {:.3e}, stationarity {:.3e}",
                report.stages,
                report.feasibility,
                report.stationarity.unwrap_or(f64::NAN)
            ));
            Ok(EXIT_OK)
        }
        SolveStatus::Stalled => {
            eprintln!(
                "solve: penalty path stalled after {} stage(s), feasibility {:.3e}",
                report.stages, report.feasibility
            );
            Ok(EXIT_NOT_CONVERGED)
        }
    }
}

fn cmd_check_kkt(ctx: &Ctx) -> Result<i32> {
    let (spec, grids) = ctx.problem()?;
    let cfg = &ctx.config;
    let t = read_triplet(&cfg.output.directory, &spec, &grids)?;
    let mut report = check_kkt(&spec, &grids, &t, &cfg.conditions.tolerances, &cfg.solver.forward)?;
    if let Some(u0) = &cfg.conditions.slater_control {
        let f = u0.build()?;
        let u0 = GridFunction::from_fn(&grids, |x, s| f.eval(x, s));
        report.slater_margin = Some(check_slater(&spec, &grids, &t.u, &u0, &cfg.solver.forward)?);
    }
    let pass = report.pass;
    ctx.say(format!(
        "check-kkt: {} (stationarity {:.3e}, feasibility {:.3e}, support {:.3e}, sign {:.3e})",
        if pass { "pass" } else { "FAIL" },
        report.stationarity,
        report.feasibility,
        report.support_violation,
        report.sign_violation
    ));
    ctx.report("kkt_report.json", &KktCommandReport { config: cfg, report })?;
    Ok(if pass { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn cmd_check_ssc(ctx: &Ctx) -> Result<i32> {
    let (spec, grids) = ctx.problem()?;
    let cfg = &ctx.config;
    let c = &cfg.conditions;
    if c.tau.is_empty() {
        return Err(Error::Config("`conditions.tau` is empty".into()));
    }
    let t = read_triplet(&cfg.output.directory, &spec, &grids)?;
    let cone = CriticalCone::new(&spec, &grids, &t, c.active_tol, &cfg.solver.forward)?;
    let mut reports = Vec::with_capacity(c.tau.len());
    for &tau in &c.tau {
        let r = cone.check_ssc(tau, c.n_samples, cfg.seed)?;
        ctx.say(format!(
            "check-ssc: tau {tau:e}: {} directions, min ratio {:.6e} (nu {:e})",
            r.n_samples, r.min_ratio, r.nu
        ));
        reports.push(r);
    }
    let growth = if c.growth_radii.is_empty() {
        None
    } else {
        let g = quadratic_growth_probe(
            &spec,
            &grids,
            &t,
            &c.growth_radii,
            c.growth_samples,
            cfg.seed,
            &cfg.solver.forward,
        )?;
        ctx.say(format!("check-ssc: growth constant {:?}", g.kappa));
        Some(g)
    };
    let pass = reports.iter().all(|r| r.positive) && growth.as_ref().is_none_or(|g| g.nonnegative);
    ctx.say(format!("check-ssc: {}", if pass { "pass" } else { "FAIL" }));
    ctx.report(
        "ssc_report.json",
        &SscCommandReport {
            config: cfg,
            reports,
            growth,
            pass,
        },
    )?;
    Ok(if pass { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn cmd_gradcheck(ctx: &Ctx) -> Result<i32> {
    let (spec, grids) = ctx.problem()?;
    let cfg = &ctx.config;
    let g = &cfg.gradcheck;
    let f = g.control.build()?;
    let u = GridFunction::from_fn(&grids, |x, t| f.eval(x, t));
    let measure = g.measure.as_ref().map(|m| m.build(&spec, &grids)).transpose()?;
    let report = gradient_check(&spec, &grids, &u, measure.as_ref(), cfg.seed, &g.options(), &cfg.solver.forward)?;
    let pass = report.pass;
    ctx.say(format!(
        "gradcheck: {} (max relative error {:.3e} over {} directions)",
        if pass { "pass" } else { "FAIL" },
        report.max_relative_error,
        report.rows.len()
    ));
    ctx.report("gradcheck_report.json", &GradcheckCommandReport { config: cfg, report })?;
    Ok(if pass { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn cmd_convergence(ctx: &Ctx) -> Result<i32> {
    let cfg = &ctx.config;
    let spec = cfg.problem.build()?;
    let c = &cfg.convergence;
    let (_, default_u, default_y) = presets::manufactured();
    let control = c.control.as_ref().map(|f| f.build()).transpose()?.unwrap_or(default_u);
    let exact = c.exact.as_ref().map(|f| f.build()).transpose()?.unwrap_or(default_y);
    let levels: Vec<(Vec<usize>, usize)> = c.levels.iter().map(|l| (vec![l.nodes; spec.dim()], l.steps)).collect();
    let table = convergence_study(&spec, &levels, &control, &exact, c.isolate, &cfg.solver.forward)?;
    for l in &table.levels {
        ctx.say(format!(
            "convergence: nodes {:?} steps {}: max error {:.3e}, order h {}, order dt {}",
            l.nodes,
            l.steps,
            l.max_error,
            l.order_h.map_or("-".into(), |o| format!("{o:.3}")),
            l.order_dt.map_or("-".into(), |o| format!("{o:.3}"))
        ));
    }
    let report = ConvergenceCommandReport {
        config: cfg,
        min_order_h: table.min_order_h(),
        min_order_dt: table.min_order_dt(),
        table,
    };
    ctx.report("convergence_report.json", &report)?;
    Ok(EXIT_OK)
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit code. Errors are printed to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let Some(path) = cli.config.as_deref() else {
        eprintln!("error: --config PATH is required");
        return EXIT_USAGE;
    };
    let mut config = match RunConfig::load(path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    config.resolve(cli.out.clone(), cli.seed);
    let ctx = Ctx {
        config,
        quiet: cli.quiet,
    };
    let result = match cli.command {
        Command::Solve => cmd_solve(&ctx),
        Command::CheckKkt => cmd_check_kkt(&ctx),
        Command::CheckSsc => cmd_check_ssc(&ctx),
        Command::Gradcheck => cmd_gradcheck(&ctx),
        Command::Convergence => cmd_convergence(&ctx),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
