//! First-order optimality checks for a computed triplet, and sampled
//! probes of the second-order condition on the extended critical cone.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjoint::{adjoint_with_running_source, MeasurePair, SignMode};
use crate::calculus::{objective_from_state, Expansion};
use crate::error::{Error, Result};
use crate::forward::{solve_state, state_residual, ForwardOptions, Linearization};
use crate::grid::{GridFunction, Grids, SpatialField};
use crate::optimizer::{feasibility, project_control, stationarity, KktTriplet};
use crate::problem::{PointwiseFn, ProblemSpec};
use crate::random::{jacobi_smooth, normal_field, rng};
use crate::sensitivity::{pointwise, solve_linearized};

/// Floor applied to `τ` so that `τ = 0` is not defeated by round-off.
pub const ZERO_TAU: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KktTolerances {
    pub state: f64,
    /// Relative to `max(1, ‖φ̄‖_∞)`.
    pub adjoint: f64,
    pub stationarity: f64,
    pub feasibility: f64,
    /// Allowed misplaced mass relative to the total variation.
    pub support: f64,
    pub sign: f64,
    /// `ε_act` for active sets.
    pub active: f64,
}

impl Default for KktTolerances {
    fn default() -> Self {
        KktTolerances {
            state: 1e-8,
            adjoint: 1e-8,
            stationarity: 1e-8,
            feasibility: 1e-6,
            support: 1e-8,
            sign: 0.0,
            active: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct KktFlags {
    pub state: bool,
    pub adjoint: bool,
    pub stationarity: bool,
    pub feasibility: bool,
    pub support: bool,
    pub sign: bool,
    pub jordan: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KktReport {
    /// Max-norm residual of the discrete state equation at `(ū, ȳ)`.
    pub state_residual: f64,
    /// `‖φ̄ − φ(ȳ, μ̄)‖_∞ / max(1, ‖φ̄‖_∞)` with `φ` recomputed.
    pub adjoint_residual: f64,
    /// `‖ū − P(−φ/ν)‖_∞` with the recomputed adjoint.
    pub stationarity: f64,
    pub feasibility: f64,
    /// Mass sitting at nodes where its bound is inactive by more than `ε_act`.
    pub support_violation: f64,
    /// Negative mass where only nonnegative masses are allowed.
    pub sign_violation: f64,
    pub total_variation: f64,
    /// `min ȳ over supp μ⁺ − max ȳ over supp μ⁻`; two-sided bounds with
    /// both parts present only.
    pub jordan_separation: Option<f64>,
    pub slater_margin: Option<f64>,
    pub terminal_mass: bool,
    pub tolerances: KktTolerances,
    pub flags: KktFlags,
    pub pass: bool,
}

/// Recomputes the state residual and the adjoint from `(ū, ȳ, μ̄)` and checks
/// stationarity, feasibility and the support and sign conditions on `μ̄`.
pub fn check_kkt(
    spec: &ProblemSpec,
    grids: &Grids,
    t: &KktTriplet,
    tol: &KktTolerances,
    opts: &ForwardOptions,
) -> Result<KktReport> {
    for f in [&t.u, &t.y, &t.phi, &t.measure.mass_q] {
        grids.check(f)?;
    }
    grids.check_spatial(&t.measure.mass_terminal)?;
    let state_res = state_residual(spec, grids, &t.u, &t.y)?;
    let lin = Linearization::new(spec, grids, &t.y, opts.linear_solver)?;
    let ly = pointwise(grids, &t.y, |x, s, v| spec.running_cost.dy(x, s, v));
    let phi = adjoint_with_running_source(grids, &lin, &ly, &t.measure)?;
    let adjoint_res = phi.sub(&t.phi).max_abs() / t.phi.max_abs().max(1.0);
    let stat = stationarity(spec, &t.u, &phi);
    let feas = feasibility(spec, &t.y);

    let sc = spec.state_constraint;
    let eps = tol.active;
    let negative_allowed = sc.is_bilateral() && t.measure.sign_mode == SignMode::Signed;
    let mut support = 0.0;
    let mut sign = 0.0;
    let mut pos_min = f64::INFINITY;
    let mut neg_max = f64::NEG_INFINITY;
    let mut visit = |m: f64, y: f64| {
        if m > 0.0 {
            if y < sc.upper() - eps {
                support += m;
            }
            pos_min = pos_min.min(y);
        } else if m < 0.0 {
            if !negative_allowed {
                sign -= m;
            } else if y > sc.lower() + eps {
                support -= m;
            }
            neg_max = neg_max.max(y);
        }
    };
    let n = grids.space.interior_len();
    for (&m, &y) in t.measure.mass_q.values()[n..].iter().zip(&t.y.values()[n..]) {
        visit(m, y);
    }
    for (&m, y) in t.measure.mass_terminal.values.iter().zip(t.y.terminal().values) {
        visit(m, y);
    }
    let tv = t.measure.total_variation();
    let jordan_separation = (sc.is_bilateral() && pos_min.is_finite() && neg_max.is_finite()).then_some(pos_min - neg_max);
    let flags = KktFlags {
        state: state_res <= tol.state,
        adjoint: adjoint_res <= tol.adjoint,
        stationarity: stat <= tol.stationarity,
        feasibility: feas <= tol.feasibility,
        support: support <= tol.support * tv,
        sign: sign <= tol.sign,
        jordan: jordan_separation.is_none_or(|s| s > 2.0 * eps),
    };
    let pass = flags.state
        && flags.adjoint
        && flags.stationarity
        && flags.feasibility
        && flags.support
        && flags.sign
        && flags.jordan;
    Ok(KktReport {
        state_residual: state_res,
        adjoint_residual: adjoint_res,
        stationarity: stat,
        feasibility: feas,
        support_violation: support,
        sign_violation: sign,
        total_variation: tv,
        jordan_separation,
        slater_margin: None,
        terminal_mass: t.has_terminal_mass(),
        tolerances: *tol,
        flags,
        pass,
    })
}

/// Smallest distance of `ȳ + S'(ū)(u₀ − ū)` to the state bounds over all
/// nodes; positive means the linearized Slater condition holds.
pub fn check_slater(
    spec: &ProblemSpec,
    grids: &Grids,
    u_bar: &GridFunction,
    u0: &GridFunction,
    opts: &ForwardOptions,
) -> Result<f64> {
    grids.check(u0)?;
    let b = spec.bounds;
    if u0.values().iter().any(|&v| v < b.lower || v > b.upper) {
        log::warn!("Slater control lies outside the control box");
    }
    let st = solve_state(spec, grids, u_bar, opts)?;
    let lin = Linearization::new(spec, grids, &st.y, opts.linear_solver)?;
    let z = solve_linearized(&lin, &u0.sub(u_bar))?;
    let sc = spec.state_constraint;
    Ok(st
        .y
        .add(&z)
        .values()
        .iter()
        .map(|&w| (sc.upper() - w).min(w - sc.lower()))
        .fold(f64::INFINITY, f64::min))
}

/// Slacks of the cone conditions; each is nonnegative for members.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConeSlacks {
    /// `τ‖v‖_p − ⟨φ̄ + νū, v⟩`.
    pub derivative: f64,
    /// Minus the largest sign violation on the active control sets.
    pub control_sign: f64,
    /// `τ‖v‖_p − max z_v` over `{ȳ = γ_max}`; absent if that set is empty.
    pub state_upper: Option<f64>,
    /// `τ‖v‖_p + min z_v` over `{ȳ = γ_min}`.
    pub state_lower: Option<f64>,
    /// `∫z_v dμ̄ + τ‖v‖_p`, or `τ‖v‖_p − ∫|z_v| d|μ̄|` for two-sided bounds.
    pub measure: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConeMembership {
    pub slacks: ConeSlacks,
    pub member: bool,
    pub tau: f64,
    pub tau_effective: f64,
    pub p: f64,
    pub lp_norm: f64,
}

/// `τ`-independent ingredients of the cone conditions.
#[derive(Debug, Clone, Copy)]
struct ConeTerms {
    derivative: f64,
    sign_violation: f64,
    z_upper_max: Option<f64>,
    z_lower_min: Option<f64>,
    pairing: f64,
    bilateral: bool,
    lp_norm: f64,
    p: f64,
}

impl ConeTerms {
    fn at(&self, tau: f64) -> ConeMembership {
        let tau_effective = tau.max(ZERO_TAU);
        let slack = tau_effective * self.lp_norm;
        let slacks = ConeSlacks {
            derivative: slack - self.derivative,
            control_sign: 0.0 - self.sign_violation,
            state_upper: self.z_upper_max.map(|z| slack - z),
            state_lower: self.z_lower_min.map(|z| slack + z),
            measure: if self.bilateral { slack - self.pairing } else { self.pairing + slack },
        };
        let member = slacks.derivative >= 0.0
            && slacks.control_sign >= 0.0
            && slacks.state_upper.is_none_or(|s| s >= 0.0)
            && slacks.state_lower.is_none_or(|s| s >= 0.0)
            && slacks.measure >= 0.0;
        ConeMembership {
            slacks,
            member,
            tau,
            tau_effective,
            p: self.p,
            lp_norm: self.lp_norm,
        }
    }
}

/// How a probe direction was generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionKind {
    Random,
    Constant,
    Checkerboard,
    Impulse,
}

#[derive(Debug, Clone)]
pub struct Direction {
    pub id: usize,
    pub kind: DirectionKind,
    pub v: GridFunction,
    /// `S'(ū)v`.
    pub z: GridFunction,
    pub membership: ConeMembership,
    terms: ConeTerms,
}

#[derive(Debug, Clone)]
pub struct ConeSample {
    pub directions: Vec<Direction>,
    pub attempts: usize,
    pub acceptance_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SscSample {
    pub id: usize,
    pub kind: DirectionKind,
    pub value: f64,
    pub l2_norm_sq: f64,
    pub ratio: f64,
    /// Member of the cone with `τ = 0`.
    pub critical: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SscReport {
    pub tau: f64,
    pub tau_effective: f64,
    pub p: f64,
    pub nu: f64,
    /// Directions that passed the membership filter.
    pub n_samples: usize,
    pub attempts: usize,
    pub rejected_directions: usize,
    pub acceptance_rate: f64,
    pub samples: Vec<SscSample>,
    /// Smallest `Q(v)/‖v‖²_{L²}` over accepted directions.
    pub min_ratio: f64,
    /// Same minimum restricted to `τ = 0` members.
    pub critical_min_ratio: Option<f64>,
    /// Largest `|Q(v) − ν‖v‖²| / ‖v‖²` over accepted directions.
    pub max_curvature_term: f64,
    /// `Q(v)/‖v‖²` for the space-time checkerboard, before any filtering.
    pub nu_limit_diagnostic: f64,
    /// `min_ratio > 0`.
    pub positive: bool,
}

/// Expansion of the Lagrangian at a triplet together with its active sets.
pub struct CriticalCone<'a> {
    spec: &'a ProblemSpec,
    grids: &'a Grids,
    expansion: Expansion,
    gradient: GridFunction,
    control_lower: Vec<bool>,
    control_upper: Vec<bool>,
    state_upper: Vec<bool>,
    state_lower: Vec<bool>,
    tangent: Option<Tangent>,
    active_tol: f64,
}

/// Removes the linearized state response at active state nodes by a
/// correction supported on the control-inactive nodes, minimal in `L²(Q)`.
#[derive(Debug, Clone)]
struct Tangent {
    nodes: Vec<usize>,
    /// Masked Riesz representers of `v ↦ (S'(ū)v)_i`.
    basis: Vec<GridFunction>,
    pinv: DMatrix<f64>,
}

impl Tangent {
    fn build(expansion: &Expansion, grids: &Grids, free: &[bool], active: &[bool]) -> Result<Option<Tangent>> {
        let nodes: Vec<usize> = active.iter().enumerate().filter(|(_, &a)| a).map(|(i, _)| i).collect();
        if nodes.is_empty() {
            return Ok(None);
        }
        let w = grids.weight(1);
        let no_terminal = SpatialField::zeros(&grids.space);
        let basis: Vec<GridFunction> = nodes
            .par_iter()
            .map(|&i| {
                let mut s = GridFunction::zeros(grids);
                s.values_mut()[i] = 1.0 / w;
                let mut r = expansion.lin.backward(&s, &no_terminal)?;
                for (x, &f) in r.values_mut().iter_mut().zip(free) {
                    if !f {
                        *x = 0.0;
                    }
                }
                Ok(r)
            })
            .collect::<Result<_>>()?;
        let k = nodes.len();
        let dot = |a: &GridFunction, b: &GridFunction| w * a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum::<f64>();
        let rows: Vec<Vec<f64>> = (0..k)
            .into_par_iter()
            .map(|a| (0..k).map(|b| dot(&basis[a], &basis[b])).collect())
            .collect();
        let gram = DMatrix::from_fn(k, k, |a, b| rows[a][b]);
        let scale = gram.diagonal().max();
        if scale <= 0.0 {
            return Ok(None);
        }
        let pinv = gram
            .pseudo_inverse(1e-10 * scale)
            .map_err(|e| Error::LinearSolveFailure(e.to_string()))?;
        Ok(Some(Tangent { nodes, basis, pinv }))
    }

    fn correct(&self, v: &mut GridFunction, z: &GridFunction) {
        let rhs = DVector::from_iterator(self.nodes.len(), self.nodes.iter().map(|&i| z.values()[i]));
        let c = &self.pinv * rhs;
        for (cj, r) in c.iter().zip(&self.basis) {
            v.axpy(-cj, r);
        }
    }
}

impl<'a> CriticalCone<'a> {
    pub fn new(
        spec: &'a ProblemSpec,
        grids: &'a Grids,
        t: &KktTriplet,
        active_tol: f64,
        opts: &ForwardOptions,
    ) -> Result<Self> {
        if !(active_tol >= 0.0 && active_tol.is_finite()) {
            return Err(Error::InvalidOption(format!("active tolerance must be nonnegative, got {active_tol}")));
        }
        let expansion = Expansion::with_measure(spec, grids, &t.u, &t.measure, opts)?;
        let gradient = expansion.gradient();
        let n = grids.space.interior_len();
        let b = spec.bounds;
        let sc = spec.state_constraint;
        let level_mask = |f: &dyn Fn(usize) -> bool| -> Vec<bool> {
            (0..t.u.values().len()).map(|i| i >= n && f(i)).collect()
        };
        let u = expansion.u.values();
        let y = expansion.y().values();
        // a node counts for the nearer bound only
        let near_lower = |i: usize| u[i] - b.lower <= b.upper - u[i];
        let control_lower = level_mask(&|i| u[i] <= b.lower + active_tol && near_lower(i));
        let control_upper = level_mask(&|i| u[i] >= b.upper - active_tol && !near_lower(i));
        let state_upper = level_mask(&|i| y[i] >= sc.upper() - active_tol);
        let state_lower = level_mask(&|i| y[i] <= sc.lower() + active_tol);
        let free: Vec<bool> = (0..u.len())
            .map(|i| i >= n && !control_lower[i] && !control_upper[i])
            .collect();
        let active: Vec<bool> = state_upper.iter().zip(&state_lower).map(|(a, b)| *a || *b).collect();
        let tangent = Tangent::build(&expansion, grids, &free, &active)?;
        Ok(CriticalCone {
            spec,
            grids,
            expansion,
            gradient,
            control_lower,
            control_upper,
            state_upper,
            state_lower,
            tangent,
            active_tol,
        })
    }

    pub fn expansion(&self) -> &Expansion {
        &self.expansion
    }

    fn measure(&self) -> &MeasurePair {
        &self.expansion.measure
    }

    fn terms(&self, v: &GridFunction) -> Result<(ConeTerms, GridFunction)> {
        let g = self.grids;
        g.check(v)?;
        let z = self.expansion.linearized(v)?;
        let vals = v.values();
        let mut sign_violation = 0.0f64;
        for (i, &x) in vals.iter().enumerate() {
            if self.control_lower[i] {
                sign_violation = sign_violation.max(-x);
            }
            if self.control_upper[i] {
                sign_violation = sign_violation.max(x);
            }
        }
        let masked = |mask: &[bool], pick: fn(f64, f64) -> f64| {
            z.values().iter().zip(mask).filter(|(_, &m)| m).map(|(&z, _)| z).reduce(pick)
        };
        let z_upper_max = masked(&self.state_upper, f64::max);
        let z_lower_min = masked(&self.state_lower, f64::min);
        let bilateral = self.spec.state_constraint.is_bilateral();
        let pairing = if bilateral {
            self.measure().mass_q.values().iter().zip(z.values()).map(|(m, z)| (m * z).abs()).sum::<f64>()
                + self
                    .measure()
                    .mass_terminal
                    .values
                    .iter()
                    .zip(z.terminal().values)
                    .map(|(m, z)| (m * z).abs())
                    .sum::<f64>()
        } else {
            self.measure().pair(&z)
        };
        let p = self.spec.lp_exponent;
        Ok((
            ConeTerms {
                derivative: g.inner_product(&self.gradient, v)?,
                sign_violation,
                z_upper_max,
                z_lower_min,
                pairing,
                bilateral,
                lp_norm: g.lp_norm(v, p)?,
                p,
            },
            z,
        ))
    }

    pub fn membership(&self, v: &GridFunction, tau: f64) -> Result<ConeMembership> {
        Ok(self.terms(v)?.0.at(tau))
    }

    /// Zeroes `v` at level 0 and where a control bound is strongly active,
    /// fixes its sign where the bound is weakly active, removes the
    /// linearized state response at active state nodes and scales the result
    /// to unit `L^p` norm. Returns zero if nothing survives.
    pub fn process(&self, v: &GridFunction) -> Result<GridFunction> {
        self.grids.check(v)?;
        let n = self.grids.space.interior_len();
        let eps = self.active_tol;
        let mut out = v.clone();
        out.level_mut(0).fill(0.0);
        let g = self.gradient.values();
        for (i, x) in out.values_mut().iter_mut().enumerate().skip(n) {
            if self.control_lower[i] {
                *x = if g[i] > eps { 0.0 } else { x.abs() };
            } else if self.control_upper[i] {
                *x = if g[i] < -eps { 0.0 } else { -x.abs() };
            }
        }
        let p = self.spec.lp_exponent;
        let before = self.grids.lp_norm(&out, p)?;
        if let Some(t) = &self.tangent {
            let z = self.expansion.linearized(&out)?;
            t.correct(&mut out, &z);
        }
        let norm = self.grids.lp_norm(&out, p)?;
        if norm > 1e-8 * before {
            Ok(out.scaled(1.0 / norm))
        } else {
            Ok(GridFunction::zeros(self.grids))
        }
    }

    fn evaluate(&self, id: usize, kind: DirectionKind, v: GridFunction, tau: f64) -> Result<Direction> {
        let (terms, z) = self.terms(&v)?;
        Ok(Direction {
            id,
            kind,
            v,
            z,
            membership: terms.at(tau),
            terms,
        })
    }

    /// Draws smoothed normal fields, processes them and keeps cone members
    /// until `n` are found or `100·n` candidates have been tried.
    pub fn sample(&self, tau: f64, n: usize, seed: u64) -> Result<ConeSample> {
        if n == 0 {
            return Err(Error::InvalidOption("sample size must be positive".into()));
        }
        let mut r = rng(seed);
        let max_attempts = 100 * n;
        let mut directions = Vec::with_capacity(n);
        let mut attempts = 0;
        while directions.len() < n && attempts < max_attempts {
            let batch = (2 * (n - directions.len())).max(16).min(max_attempts - attempts);
            let raw: Vec<GridFunction> = (0..batch)
                .map(|_| jacobi_smooth(self.grids, &normal_field(self.grids, &mut r)))
                .collect();
            let evals: Vec<Result<Direction>> = raw
                .into_par_iter()
                .enumerate()
                .map(|(i, v)| self.evaluate(attempts + i, DirectionKind::Random, self.process(&v)?, tau))
                .collect();
            let mut used = batch;
            for (i, d) in evals.into_iter().enumerate() {
                let d = d?;
                if d.membership.member && d.membership.lp_norm > 0.0 {
                    directions.push(d);
                    if directions.len() == n {
                        used = i + 1;
                        break;
                    }
                }
            }
            attempts += used;
        }
        if directions.is_empty() {
            return Err(Error::EmptySample { attempts });
        }
        let acceptance_rate = directions.len() as f64 / attempts as f64;
        Ok(ConeSample {
            directions,
            attempts,
            acceptance_rate,
        })
    }

    fn checkerboard(&self, with_time: bool) -> GridFunction {
        let space = &self.grids.space;
        let mut v = GridFunction::zeros(self.grids);
        for k in 1..self.grids.levels() {
            for (idx, x) in v.level_mut(k).iter_mut().enumerate() {
                let (i, j) = space.unflatten(idx);
                let parity = i + j + if with_time { k } else { 0 };
                *x = if parity % 2 == 0 { 1.0 } else { -1.0 };
            }
        }
        v
    }

    /// Unprocessed deterministic probes added to every SSC check: the
    /// constants ±1, space-time and space-only checkerboards, and impulses
    /// at the middle node at mid and final time.
    pub fn probes(&self) -> Vec<(DirectionKind, GridFunction)> {
        let g = self.grids;
        let n = g.space.interior_len();
        let last = g.levels() - 1;
        let mut out = Vec::new();
        for c in [1.0, -1.0] {
            let mut v = GridFunction::constant(g, c);
            v.level_mut(0).fill(0.0);
            out.push((DirectionKind::Constant, v));
        }
        out.push((DirectionKind::Checkerboard, self.checkerboard(true)));
        out.push((DirectionKind::Checkerboard, self.checkerboard(false)));
        for k in [last.div_ceil(2).max(1), last] {
            let mut v = GridFunction::zeros(g);
            v.set(n / 2, k, 1.0);
            out.push((DirectionKind::Impulse, v));
        }
        out
    }

    fn ratio(&self, d: &Direction) -> Result<(f64, f64)> {
        let q = self.expansion.bilinear_from(self.grids, &d.v, &d.v, &d.z, &d.z)?;
        let l2 = self.grids.lp_norm(&d.v, 2.0)?.powi(2);
        Ok((q, l2))
    }

    /// Minimum of `Q(v)/‖v‖²_{L²}` over sampled cone members and the
    /// deterministic probes that pass the membership filter.
    pub fn check_ssc(&self, tau: f64, n: usize, seed: u64) -> Result<SscReport> {
        let sample = self.sample(tau, n, seed)?;
        let base = sample.attempts;
        let probes = self.probes();
        let n_probes = probes.len();
        let probe_dirs: Vec<Direction> = probes
            .into_par_iter()
            .enumerate()
            .map(|(j, (kind, v))| self.evaluate(base + j, kind, self.process(&v)?, tau))
            .collect::<Result<_>>()?;
        let members: Vec<&Direction> = sample
            .directions
            .iter()
            .chain(probe_dirs.iter().filter(|d| d.membership.member && d.membership.lp_norm > 0.0))
            .collect();
        let samples: Vec<SscSample> = members
            .par_iter()
            .map(|d| {
                let (value, l2) = self.ratio(d)?;
                Ok(SscSample {
                    id: d.id,
                    kind: d.kind,
                    value,
                    l2_norm_sq: l2,
                    ratio: value / l2,
                    critical: d.terms.at(0.0).member,
                })
            })
            .collect::<Result<_>>()?;
        let nu = self.spec.nu;
        let min_ratio = samples.iter().map(|s| s.ratio).fold(f64::INFINITY, f64::min);
        let critical_min_ratio = samples.iter().filter(|s| s.critical).map(|s| s.ratio).reduce(f64::min);
        let max_curvature_term = samples.iter().map(|s| (s.ratio - nu).abs()).fold(0.0, f64::max);
        let cb = self.checkerboard(true);
        let zc = self.expansion.linearized(&cb)?;
        let qc = self.expansion.bilinear_from(self.grids, &cb, &cb, &zc, &zc)?;
        let nu_limit_diagnostic = qc / self.grids.lp_norm(&cb, 2.0)?.powi(2);
        let attempts = sample.attempts + n_probes;
        let tau_effective = tau.max(ZERO_TAU);
        Ok(SscReport {
            tau,
            tau_effective,
            p: self.spec.lp_exponent,
            nu,
            n_samples: samples.len(),
            attempts,
            rejected_directions: attempts - samples.len(),
            acceptance_rate: sample.acceptance_rate,
            samples,
            min_ratio,
            critical_min_ratio,
            max_curvature_term,
            nu_limit_diagnostic,
            positive: min_ratio > 0.0,
        })
    }
}

const DEFAULT_ACTIVE_TOL: f64 = 1e-6;

/// Cone membership with `ε_act = 1e-6` and default forward options.
pub fn cone_membership(
    spec: &ProblemSpec,
    grids: &Grids,
    t: &KktTriplet,
    v: &GridFunction,
    tau: f64,
) -> Result<ConeMembership> {
    CriticalCone::new(spec, grids, t, DEFAULT_ACTIVE_TOL, &ForwardOptions::default())?.membership(v, tau)
}

pub fn sample_cone(
    spec: &ProblemSpec,
    grids: &Grids,
    t: &KktTriplet,
    tau: f64,
    n: usize,
    seed: u64,
) -> Result<ConeSample> {
    CriticalCone::new(spec, grids, t, DEFAULT_ACTIVE_TOL, &ForwardOptions::default())?.sample(tau, n, seed)
}

pub fn check_ssc(spec: &ProblemSpec, grids: &Grids, t: &KktTriplet, tau: f64, n: usize, seed: u64) -> Result<SscReport> {
    CriticalCone::new(spec, grids, t, DEFAULT_ACTIVE_TOL, &ForwardOptions::default())?.check_ssc(tau, n, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthRow {
    pub radius: f64,
    pub attempts: usize,
    /// Perturbations whose state violates the constraint no more than `ȳ`.
    pub feasible: usize,
    /// `min 2(J(u) − J(ū)) / ‖u − ū‖²_{L²}` over feasible perturbations.
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthReport {
    pub rows: Vec<GrowthRow>,
    pub nu: f64,
    /// Smallest row value.
    pub kappa: Option<f64>,
    /// Every feasible sample had `J(u) ≥ J(ū)`.
    pub nonnegative: bool,
}

/// Samples admissible controls at `L²` distance `r` from `ū` for each radius
/// and records the empirical growth constant.
///
/// Even samples use smoothed normal directions and odd samples raw ones.
/// Each is projected onto the control box and rescaled until the distance
/// matches `r`.
#[allow(clippy::too_many_arguments)]
pub fn quadratic_growth_probe(
    spec: &ProblemSpec,
    grids: &Grids,
    t: &KktTriplet,
    radii: &[f64],
    n_per_radius: usize,
    seed: u64,
    opts: &ForwardOptions,
) -> Result<GrowthReport> {
    if let Some(r) = radii.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
        return Err(Error::InvalidOption(format!("radii must be positive, got {r}")));
    }
    grids.check(&t.u)?;
    let y_bar = solve_state(spec, grids, &t.u, opts)?.y;
    let j_bar = objective_from_state(spec, grids, &t.u, &y_bar);
    let allowed = feasibility(spec, &y_bar);
    let mut rng = rng(seed);
    let mut rows = Vec::with_capacity(radii.len());
    for &radius in radii {
        let dirs: Vec<GridFunction> = (0..n_per_radius)
            .map(|i| {
                let raw = normal_field(grids, &mut rng);
                if i % 2 == 0 {
                    jacobi_smooth(grids, &raw)
                } else {
                    raw
                }
            })
            .collect();
        let values: Vec<Option<f64>> = dirs
            .par_iter()
            .map(|d| -> Result<Option<f64>> {
                let perturbed = |s: f64| -> Result<(GridFunction, f64)> {
                    let mut u = project_control(&t.u.add(&d.scaled(s)), spec.bounds);
                    u.level_mut(0).copy_from_slice(t.u.level(0));
                    let dist = grids.lp_norm(&u.sub(&t.u), 2.0)?;
                    Ok((u, dist))
                };
                let mut s = radius / grids.lp_norm(d, 2.0)?;
                let (mut u, mut dist) = perturbed(s)?;
                for _ in 0..8 {
                    if dist == 0.0 || (dist - radius).abs() <= 1e-6 * radius {
                        break;
                    }
                    s *= radius / dist;
                    (u, dist) = perturbed(s)?;
                }
                if dist == 0.0 {
                    return Ok(None);
                }
                let y = solve_state(spec, grids, &u, opts)?.y;
                if feasibility(spec, &y) > allowed {
                    return Ok(None);
                }
                let j = objective_from_state(spec, grids, &u, &y);
                Ok(Some(2.0 * (j - j_bar) / (dist * dist)))
            })
            .collect::<Result<_>>()?;
        let feasible: Vec<f64> = values.into_iter().flatten().collect();
        rows.push(GrowthRow {
            radius,
            attempts: n_per_radius,
            feasible: feasible.len(),
            kappa: feasible.iter().copied().reduce(f64::min),
        });
    }
    let kappa = rows.iter().filter_map(|r| r.kappa).reduce(f64::min);
    Ok(GrowthReport {
        rows,
        nu: spec.nu,
        kappa,
        nonnegative: kappa.is_none_or(|k| k >= 0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::{solve_ocp, SolveOpts};
    use crate::problem::{RunningCost, SpaceTimeField, StateConstraint};

    fn tracking(gamma: f64, amplitude: f64) -> ProblemSpec {
        ProblemSpec::unit(1)
            .with_running_cost(RunningCost::tracking(SpaceTimeField::new("bump", move |x, t| {
                amplitude * (std::f64::consts::PI * x[0]).sin() * t
            })))
            .with_nu(1e-1)
            .with_bounds(-20.0, 20.0)
            .with_state_constraint(StateConstraint::Upper { gamma })
    }

    fn solved(spec: &ProblemSpec, g: &Grids) -> KktTriplet {
        let opts = SolveOpts {
            lambda0: 10.0,
            ..Default::default()
        };
        solve_ocp(spec, g, &opts).unwrap()
    }

    fn active() -> (ProblemSpec, Grids, KktTriplet) {
        let spec = tracking(0.1, 4.0);
        let g = spec.grids(&[17], 16).unwrap();
        let t = solved(&spec, &g);
        (spec, g, t)
    }

    #[test]
    fn solver_output_passes_the_first_order_check() {
        let (spec, g, t) = active();
        let r = check_kkt(&spec, &g, &t, &KktTolerances::default(), &ForwardOptions::default()).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.total_variation > 0.0);
        assert!(r.support_violation <= 1e-8 * r.total_variation);
        assert!(r.jordan_separation.is_none());
    }

    #[test]
    fn misplaced_mass_is_reported_exactly() {
        let (spec, g, mut t) = active();
        let base = check_kkt(&spec, &g, &t, &KktTolerances::default(), &ForwardOptions::default()).unwrap();
        // a node near the boundary at the first level is far below γ
        assert!(t.y.get(0, 1) < 0.1 - 1e-3);
        let m = 0.25;
        t.measure.mass_q.set(0, 1, m);
        let r = check_kkt(&spec, &g, &t, &KktTolerances::default(), &ForwardOptions::default()).unwrap();
        assert!((r.support_violation - base.support_violation - m).abs() < 1e-15);
        assert!(!r.flags.support && !r.pass);
    }

    #[test]
    fn shifted_control_shows_up_in_stationarity() {
        let (spec, g, mut t) = active();
        t.u = project_control(&t.phi.scaled(-1.0 / spec.nu), spec.bounds).map(|v| v + 0.1);
        let r = check_kkt(&spec, &g, &t, &KktTolerances::default(), &ForwardOptions::default()).unwrap();
        assert!(r.stationarity >= 0.1 - 1e-8);
        assert!(!r.flags.stationarity);
    }

    #[test]
    fn negative_masses_are_sign_violations_for_one_sided_bounds() {
        let (spec, g, mut t) = active();
        let n = g.space.interior_len();
        let k = g.levels() - 1;
        let i = (0..n).find(|&i| t.y.get(i, k) >= 0.1 - 1e-6).expect("active node at T");
        t.measure.mass_q.set(i, k, -0.5);
        let r = check_kkt(&spec, &g, &t, &KktTolerances::default(), &ForwardOptions::default()).unwrap();
        assert_eq!(r.sign_violation, 0.5);
        assert!(!r.flags.sign);
    }

    #[test]
    fn slater_margin_examples() {
        let o = ForwardOptions::default();
        let loose = tracking(100.0, 4.0);
        let g = loose.grids(&[17], 16).unwrap();
        let u = GridFunction::from_fn(&g, |x, t| x[0] * t);
        let y = solve_state(&loose, &g, &u, &o).unwrap().y;
        let ymax = y.values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let m = check_slater(&loose, &g, &u, &u, &o).unwrap();
        assert!((m - (100.0 - ymax)).abs() < 1e-12);

        let (spec, g, t) = active();
        let same = check_slater(&spec, &g, &t.u, &t.u, &o).unwrap();
        let direct = t.y.values().iter().map(|&v| 0.1 - v).fold(f64::INFINITY, f64::min);
        assert!((same - direct).abs() < 1e-9);
        let low = GridFunction::constant(&g, -20.0);
        assert!(check_slater(&spec, &g, &t.u, &low, &o).unwrap() > 0.05);
    }

    #[test]
    fn cone_membership_examples() {
        let (spec, g, t) = active();
        let zero = GridFunction::zeros(&g);
        assert!(cone_membership(&spec, &g, &t, &zero, 0.0).unwrap().member);

        let capped = tracking(100.0, 40.0).with_bounds(-1.0, 0.5);
        let gc = capped.grids(&[9], 8).unwrap();
        let tc = solved(&capped, &gc);
        let n = gc.space.interior_len();
        assert!(tc.u.get(n / 2, 4) >= 0.5 - 1e-6);
        let mut v = GridFunction::zeros(&gc);
        v.set(n / 2, 4, 1.0);
        let m = cone_membership(&capped, &gc, &tc, &v, 1e-3).unwrap();
        assert!(!m.member && m.slacks.control_sign < 0.0);
    }

    #[test]
    fn sampling_without_active_constraints_accepts_everything() {
        let spec = tracking(100.0, 1.0);
        let g = spec.grids(&[17], 8).unwrap();
        let t = solved(&spec, &g);
        let s = sample_cone(&spec, &g, &t, 1e-3, 40, 3).unwrap();
        assert_eq!(s.acceptance_rate, 1.0);
        assert_eq!(s.directions.len(), 40);
    }

    #[test]
    fn sampling_at_the_upper_control_bound_gives_nonpositive_directions() {
        let spec = tracking(100.0, 40.0).with_bounds(-1.0, 0.5);
        let g = spec.grids(&[9], 8).unwrap();
        let t = solved(&spec, &g);
        let n = g.space.interior_len();
        assert!(t.u.values()[n..].iter().all(|&u| u == 0.5));
        // strongly active everywhere: the cone is trivial
        assert!(matches!(sample_cone(&spec, &g, &t, 1e-3, 10, 5), Err(Error::EmptySample { .. })));
        let wide = CriticalCone::new(&spec, &g, &t, 1e3, &ForwardOptions::default()).unwrap();
        let s = wide.sample(1e3, 10, 5).unwrap();
        assert_eq!(s.directions.len(), 10);
        for d in &s.directions {
            assert!(d.v.values().iter().all(|&x| x <= 0.0));
        }
    }

    #[test]
    fn sampling_is_deterministic_under_a_seed() {
        let (spec, g, t) = active();
        let a = sample_cone(&spec, &g, &t, 1e-3, 12, 9).unwrap();
        let b = sample_cone(&spec, &g, &t, 1e-3, 12, 9).unwrap();
        assert_eq!(a.attempts, b.attempts);
        for (x, y) in a.directions.iter().zip(&b.directions) {
            assert_eq!(x.id, y.id);
            assert_eq!(x.v, y.v);
        }
    }

    #[test]
    fn zero_sample_size_is_rejected() {
        let (spec, g, t) = active();
        assert!(matches!(sample_cone(&spec, &g, &t, 1e-3, 0, 1), Err(Error::InvalidOption(_))));
    }

    #[test]
    fn convex_instance_ratios_exceed_nu() {
        let (spec, g, t) = active();
        let r = check_ssc(&spec, &g, &t, 1e-3, 60, 2).unwrap();
        assert!(r.min_ratio >= spec.nu - 1e-8, "{}", r.min_ratio);
        assert!(r.positive);
        assert!(r.min_ratio <= spec.nu + r.max_curvature_term + 1e-14);
        assert!(r.samples.windows(2).all(|w| w[0].id < w[1].id));
    }

    #[test]
    fn growth_on_the_interior_quadratic_instance_is_the_exact_expansion() {
        let spec = tracking(100.0, 1.0);
        let g = spec.grids(&[17], 8).unwrap();
        let t = solved(&spec, &g);
        let o = ForwardOptions::default();
        let r = quadratic_growth_probe(&spec, &g, &t, &[1e-2, 1e-3], 8, 4, &o).unwrap();
        assert!(r.nonnegative);
        let k = r.kappa.unwrap();
        assert!(k >= spec.nu * (1.0 - 1e-4) && k <= spec.nu * 1.1, "{k}");
        assert!(r.rows.iter().all(|row| row.feasible == row.attempts));
    }

    #[test]
    fn growth_rejects_zero_radius() {
        let spec = tracking(100.0, 1.0);
        let g = spec.grids(&[9], 4).unwrap();
        let t = solved(&spec, &g);
        let o = ForwardOptions::default();
        assert!(quadratic_growth_probe(&spec, &g, &t, &[0.0], 2, 1, &o).is_err());
    }

    #[test]
    fn processed_directions_leave_active_states_fixed() {
        let (spec, g, t) = active();
        let o = ForwardOptions::default();
        let cone = CriticalCone::new(&spec, &g, &t, 1e-6, &o).unwrap();
        let mut r = rng(5);
        let v = cone.process(&normal_field(&g, &mut r)).unwrap();
        let z = crate::sensitivity::linearized_state_at(&spec, &g, &t.u, &v, &o).unwrap();
        let y = solve_state(&spec, &g, &t.u, &o).unwrap().y;
        let mut hits = 0;
        for (zi, yi) in z.values().iter().zip(y.values()) {
            if *yi >= 0.1 - 1e-6 {
                hits += 1;
                assert!(zi.abs() < 1e-10, "{zi}");
            }
        }
        assert!(hits > 0);
        assert!((g.lp_norm(&v, spec.lp_exponent).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cone_nesting_in_tau() {
        let (spec, g, t) = active();
        let cone = CriticalCone::new(&spec, &g, &t, 1e-6, &ForwardOptions::default()).unwrap();
        let mut r = rng(11);
        for _ in 0..10 {
            let v = cone.process(&normal_field(&g, &mut r)).unwrap();
            let mut prev = false;
            for tau in [0.0, 1e-3, 1e-2, 1e-1, 1.0] {
                let m = cone.membership(&v, tau).unwrap().member;
                assert!(!prev || m);
                prev = m;
            }
        }
    }
}
