//! Moreau–Yosida path following with a projected-gradient inner solver and
//! optional semismooth Newton steps.

use serde::{Deserialize, Serialize};

use crate::adjoint::MeasurePair;
use crate::calculus::Expansion;
use crate::error::{Error, Result};
use crate::forward::{solve_state, ForwardOptions};
use crate::grid::{GridFunction, Grids};
use crate::problem::{ControlBounds, ProblemSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOpts {
    pub lambda0: f64,
    pub sigma: f64,
    pub max_stages: usize,
    /// Bound on `‖u − P(−φ/ν)‖_∞`.
    pub inner_tol: f64,
    pub max_inner_iterations: usize,
    /// Bound on the largest state-constraint violation.
    pub feasibility_tol: f64,
    /// Absolute tolerance for identifying active nodes.
    pub active_tol: f64,
    pub armijo_c: f64,
    pub max_halvings: usize,
    /// Try a semismooth Newton step before each projected-gradient step.
    pub newton_acceleration: bool,
    pub forward: ForwardOptions,
}

impl Default for SolveOpts {
    fn default() -> Self {
        SolveOpts {
            lambda0: 1.0,
            sigma: 10.0,
            max_stages: 8,
            inner_tol: 1e-8,
            max_inner_iterations: 500,
            feasibility_tol: 1e-6,
            active_tol: 1e-6,
            armijo_c: 1e-4,
            max_halvings: 30,
            newton_acceleration: true,
            forward: ForwardOptions::default(),
        }
    }
}

impl SolveOpts {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda0", self.lambda0),
            ("inner_tol", self.inner_tol),
            ("feasibility_tol", self.feasibility_tol),
            ("active_tol", self.active_tol),
            ("armijo_c", self.armijo_c),
            ("newton_tol", self.forward.newton_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidOption(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.sigma > 1.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidOption(format!("sigma must exceed 1, got {}", self.sigma)));
        }
        if self.armijo_c >= 1.0 {
            return Err(Error::InvalidOption(format!("armijo_c must be below 1, got {}", self.armijo_c)));
        }
        Ok(())
    }
}

/// Per-stage diagnostics of the penalty path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    pub lambda: f64,
    pub inner_iterations: usize,
    pub newton_steps: usize,
    pub stationarity: f64,
    pub feasibility: f64,
    pub objective: f64,
    pub total_variation: f64,
    pub converged: bool,
}

/// Candidate optimal control with state, adjoint and multiplier masses.
#[derive(Debug, Clone)]
pub struct KktTriplet {
    pub u: GridFunction,
    pub y: GridFunction,
    pub phi: GridFunction,
    pub measure: MeasurePair,
    pub history: Vec<StageRecord>,
}

impl KktTriplet {
    /// True when the terminal multiplier estimate carries mass; its
    /// recovery from the penalty is a convention.
    pub fn has_terminal_mass(&self) -> bool {
        self.measure.mass_terminal.values.iter().any(|&m| m != 0.0)
    }
}

/// Nodal clamp to `[α, β]`.
pub fn project_control(w: &GridFunction, bounds: ControlBounds) -> GridFunction {
    w.map(|v| bounds.clamp(v))
}

/// `‖u − P(−φ/ν)‖_∞` over levels `1..=N_t`.
pub fn stationarity(spec: &ProblemSpec, u: &GridFunction, phi: &GridFunction) -> f64 {
    let n = u.n_space();
    u.values()[n..]
        .iter()
        .zip(&phi.values()[n..])
        .map(|(&u, &p)| (u - spec.bounds.clamp(-p / spec.nu)).abs())
        .fold(0.0, f64::max)
}

/// Largest constraint violation of `y` over all levels.
pub fn feasibility(spec: &ProblemSpec, y: &GridFunction) -> f64 {
    y.values().iter().map(|&v| spec.state_constraint.violation(v)).fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct PenalizedSolution {
    pub expansion: Expansion,
    pub iterations: usize,
    pub newton_steps: usize,
    pub stationarity: f64,
    pub objective: f64,
    /// False when the iteration limit was reached first.
    pub converged: bool,
}

impl PenalizedSolution {
    pub fn u(&self) -> &GridFunction {
        &self.expansion.u
    }

    pub fn y(&self) -> &GridFunction {
        self.expansion.y()
    }

    pub fn phi(&self) -> &GridFunction {
        &self.expansion.phi
    }

    /// Multiplier estimate `λ·e(y)` as masses.
    pub fn mu_estimate(&self) -> &MeasurePair {
        &self.expansion.measure
    }
}

const NEWTON_HALVINGS: usize = 12;

fn weighted_dot(grids: &Grids, a: &GridFunction, b: &GridFunction) -> f64 {
    grids.inner_product(a, b).expect("shapes checked by caller")
}

/// Minimizes the penalized objective over the control box starting from
/// `u_init`. Returns the last iterate with `converged = false` when the
/// iteration limit is hit.
pub fn solve_penalized(
    spec: &ProblemSpec,
    grids: &Grids,
    lambda: f64,
    u_init: &GridFunction,
    opts: &SolveOpts,
) -> Result<PenalizedSolution> {
    opts.validate()?;
    grids.check(u_init)?;
    let bounds = spec.bounds;
    let fwd = &opts.forward;
    let mut u = project_control(u_init, bounds);
    u.level_mut(0).fill(bounds.clamp(0.0));
    let mut exp = Expansion::penalized(spec, grids, &u, lambda, fwd)?;
    let mut obj = exp.objective(spec, grids);
    let mut grad = exp.gradient();
    let mut step = 1.0 / spec.nu;
    let mut prev: Option<(GridFunction, GridFunction)> = None;
    let mut newton_steps = 0;
    let mut iterations = 0;
    loop {
        let res = stationarity(spec, &exp.u, &exp.phi);
        if res <= opts.inner_tol {
            return Ok(PenalizedSolution {
                expansion: exp,
                iterations,
                newton_steps,
                stationarity: res,
                objective: obj,
                converged: true,
            });
        }
        if iterations == opts.max_inner_iterations {
            return Ok(PenalizedSolution {
                expansion: exp,
                iterations,
                newton_steps,
                stationarity: res,
                objective: obj,
                converged: false,
            });
        }
        iterations += 1;
        let allowance = 16.0 * f64::EPSILON * obj.abs().max(1.0);

        if opts.newton_acceleration {
            if let Some(dir) = newton_direction(spec, grids, &exp, &grad)? {
                // damped along the projected Newton path
                let mut s = 1.0;
                let mut taken = None;
                for _ in 0..=NEWTON_HALVINGS {
                    let mut cand = project_control(&exp.u.add(&dir.scaled(s)), bounds);
                    cand.level_mut(0).copy_from_slice(exp.u.level(0));
                    let trial = match Expansion::penalized(spec, grids, &cand, lambda, fwd) {
                        Ok(t) => t,
                        Err(Error::NewtonDiverged { .. }) => {
                            s *= 0.5;
                            continue;
                        }
                        Err(e) => return Err(e),
                    };
                    let slope = weighted_dot(grids, &grad, &cand.sub(&exp.u));
                    let t_obj = trial.objective(spec, grids);
                    if t_obj <= obj + opts.armijo_c * slope + allowance {
                        taken = Some((trial, t_obj));
                        break;
                    }
                    s *= 0.5;
                }
                if let Some((trial, t_obj)) = taken {
                    prev = Some((exp.u.clone(), grad.clone()));
                    exp = trial;
                    obj = t_obj;
                    grad = exp.gradient();
                    newton_steps += 1;
                    continue;
                }
            }
        }

        // projected gradient with Barzilai–Borwein initial step and Armijo backtracking
        if let Some((pu, pg)) = &prev {
            let du = exp.u.sub(pu);
            let dg = grad.sub(pg);
            let num = weighted_dot(grids, &du, &du);
            let den = weighted_dot(grids, &du, &dg);
            if num > 0.0 && den > 0.0 {
                step = (num / den).clamp(1e-10, 1e10);
            }
        }
        let mut s = step;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let mut cand = exp.u.clone();
            cand.axpy(-s, &grad);
            let mut cand = project_control(&cand, bounds);
            cand.level_mut(0).copy_from_slice(exp.u.level(0));
            let d = cand.sub(&exp.u);
            let slope = weighted_dot(grids, &grad, &d);
            let t = Expansion::penalized(spec, grids, &cand, lambda, fwd)?;
            let t_obj = t.objective(spec, grids);
            if t_obj <= obj + opts.armijo_c * slope + allowance {
                accepted = Some((t, t_obj));
                break;
            }
            s *= 0.5;
        }
        match accepted {
            Some((t, t_obj)) => {
                prev = Some((exp.u.clone(), grad.clone()));
                exp = t;
                obj = t_obj;
                grad = exp.gradient();
                step = s;
            }
            None => {
                return Err(Error::LineSearchFailure {
                    halvings: opts.max_halvings,
                })
            }
        }
    }
}

/// Semismooth Newton direction for `u − P(−φ/ν) = 0`. The reduced system is
/// solved by truncated CG: on negative curvature or at the iteration limit
/// the partial solution is returned, and `None` only if that is zero.
fn newton_direction(
    spec: &ProblemSpec,
    grids: &Grids,
    exp: &Expansion,
    grad: &GridFunction,
) -> Result<Option<GridFunction>> {
    let b = spec.bounds;
    let n = grids.space.interior_len();
    let target = exp.phi.map(|p| b.clamp(-p / spec.nu));
    // inactive where the projection does not clamp
    let mut inactive = vec![false; target.values().len()];
    let mut delta_a = GridFunction::zeros(grids);
    for idx in n..inactive.len() {
        let w = -exp.phi.values()[idx] / spec.nu;
        if w > b.lower && w < b.upper {
            inactive[idx] = true;
        } else {
            delta_a.values_mut()[idx] = target.values()[idx] - exp.u.values()[idx];
        }
    }
    let restrict = |f: &mut GridFunction| {
        for (v, &m) in f.values_mut().iter_mut().zip(&inactive) {
            if !m {
                *v = 0.0;
            }
        }
    };
    // H_II x = -g_I - (H δ_A)_I
    let mut rhs = grad.scaled(-1.0);
    if delta_a.max_abs() > 0.0 {
        rhs.axpy(-1.0, &exp.hessian_vec(grids, &delta_a)?);
    }
    restrict(&mut rhs);
    let dot = |a: &GridFunction, c: &GridFunction| -> f64 { a.values().iter().zip(c.values()).map(|(x, y)| x * y).sum() };
    let rnorm0 = dot(&rhs, &rhs).sqrt();
    let mut x = GridFunction::zeros(grids);
    if rnorm0 > 0.0 {
        let mut r = rhs.clone();
        let mut p = r.clone();
        let mut rr = dot(&r, &r);
        let max_it = inactive.iter().filter(|&&m| m).count().min(2000) + 10;
        for _ in 0..max_it {
            let mut hp = exp.hessian_vec(grids, &p)?;
            restrict(&mut hp);
            let php = dot(&p, &hp);
            if !(php > 0.0) {
                break;
            }
            let alpha = rr / php;
            x.axpy(alpha, &p);
            r.axpy(-alpha, &hp);
            let rr_new = dot(&r, &r);
            if rr_new.sqrt() <= 1e-12 * rnorm0 {
                break;
            }
            let beta = rr_new / rr;
            rr = rr_new;
            p = r.add(&p.scaled(beta));
        }
        if x.max_abs() == 0.0 && delta_a.max_abs() == 0.0 {
            return Ok(None);
        }
    }
    Ok(Some(x.add(&delta_a)))
}

/// Runs the penalty path `λ_j = λ₀σ^j` with warm starts from `u = P(0)`.
pub fn solve_ocp(spec: &ProblemSpec, grids: &Grids, opts: &SolveOpts) -> Result<KktTriplet> {
    spec.ensure_valid()?;
    spec.check_grids(grids)?;
    opts.validate()?;
    let mut u = GridFunction::constant(grids, spec.bounds.clamp(0.0));
    if opts.max_stages == 0 {
        let y = solve_state(spec, grids, &u, &opts.forward)?.y;
        return Err(Error::PathStalled {
            stages: 0,
            violation: feasibility(spec, &y),
            best: None,
        });
    }
    let mut history: Vec<StageRecord> = Vec::new();
    let mut last: Option<PenalizedSolution> = None;
    for stage in 0..opts.max_stages {
        let lambda = opts.lambda0 * opts.sigma.powi(stage as i32);
        let sol = solve_penalized(spec, grids, lambda, &u, opts)?;
        let feas = feasibility(spec, sol.y());
        let rec = StageRecord {
            stage,
            lambda,
            inner_iterations: sol.iterations,
            newton_steps: sol.newton_steps,
            stationarity: sol.stationarity,
            feasibility: feas,
            objective: crate::calculus::objective_from_state(spec, grids, sol.u(), sol.y()),
            total_variation: sol.mu_estimate().total_variation(),
            converged: sol.converged,
        };
        log::debug!("stage {stage}: {rec:?}");
        history.push(rec);
        u = sol.u().clone();
        let done = sol.converged && feas <= opts.feasibility_tol;
        last = Some(sol);
        if done {
            break;
        }
        let h = &history;
        let stalled = h.len() >= 3 && {
            let f = |i: usize| h[h.len() - 1 - i].feasibility;
            f(0) >= f(1) && f(1) >= f(2) && f(0) > opts.feasibility_tol
        };
        if stalled {
            break;
        }
    }
    let sol = last.expect("at least one stage ran");
    let triplet = KktTriplet {
        u: sol.expansion.u.clone(),
        y: sol.expansion.y().clone(),
        phi: sol.expansion.phi.clone(),
        measure: sol.expansion.measure.clone(),
        history,
    };
    let rec = triplet.history.last().expect("nonempty");
    if rec.converged && rec.feasibility <= opts.feasibility_tol {
        Ok(triplet)
    } else {
        Err(Error::PathStalled {
            stages: triplet.history.len(),
            violation: rec.feasibility,
            best: Some(Box::new(triplet)),
        })
    }
}
