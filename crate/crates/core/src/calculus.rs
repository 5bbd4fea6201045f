//! Reduced objective, its gradient and second derivative.

use crate::adjoint::{solve_adjoint, MeasurePair, SignMode};
use crate::error::{Error, Result};
use crate::forward::{solve_state, ForwardOptions, Linearization, State};
use crate::grid::{GridFunction, Grids, SpatialField};
use crate::problem::{PointwiseFn, ProblemSpec};
use crate::random::{rng, smooth_unit_field};
use crate::sensitivity::{pointwise, solve_linearized};
use serde::{Deserialize, Serialize};

/// Everything needed for first and second derivatives at one control:
/// state, step factorizations, adjoint and curvature weights.
///
/// Built either for a Lagrangian with a fixed measure pair or for the
/// Moreau–Yosida penalized objective with parameter `λ`.
#[derive(Debug, Clone)]
pub struct Expansion {
    pub u: GridFunction,
    pub state: State,
    pub lin: Linearization,
    pub phi: GridFunction,
    pub measure: MeasurePair,
    /// Running curvature: `L_yy − f_yy φ` (plus `λ·χ` when penalized).
    pub curvature: GridFunction,
    /// Terminal curvature (nonzero only when penalized).
    pub terminal_curvature: SpatialField,
    pub penalty: Option<f64>,
    nu: f64,
}

impl Expansion {
    /// Expansion of the reduced objective `J` (zero measure).
    pub fn new(spec: &ProblemSpec, grids: &Grids, u: &GridFunction, opts: &ForwardOptions) -> Result<Self> {
        Self::with_measure(spec, grids, u, &MeasurePair::zero(grids), opts)
    }

    /// Expansion of `u ↦ J(u) + Σ m_Q y_u + Σ m_Ω y_u^{N_t}`.
    pub fn with_measure(
        spec: &ProblemSpec,
        grids: &Grids,
        u: &GridFunction,
        measure: &MeasurePair,
        opts: &ForwardOptions,
    ) -> Result<Self> {
        let state = solve_state(spec, grids, u, opts)?;
        Self::assemble(spec, grids, u, state, measure.clone(), None, opts)
    }

    /// Expansion of the penalized objective `J_λ`.
    pub fn penalized(
        spec: &ProblemSpec,
        grids: &Grids,
        u: &GridFunction,
        lambda: f64,
        opts: &ForwardOptions,
    ) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidOption(format!("penalty parameter must be positive, got {lambda}")));
        }
        let state = solve_state(spec, grids, u, opts)?;
        let measure = penalty_measure(spec, grids, &state.y, lambda);
        Self::assemble(spec, grids, u, state, measure, Some(lambda), opts)
    }

    fn assemble(
        spec: &ProblemSpec,
        grids: &Grids,
        u: &GridFunction,
        state: State,
        measure: MeasurePair,
        penalty: Option<f64>,
        opts: &ForwardOptions,
    ) -> Result<Self> {
        let lin = Linearization::new(spec, grids, &state.y, opts.linear_solver)?;
        let phi = solve_adjoint(spec, grids, &state.y, &lin, &measure)?;
        let y = &state.y;
        let mut curvature = pointwise(grids, y, |x, t, v| spec.running_cost.dyy(x, t, v));
        let fyy = pointwise(grids, y, |x, t, v| spec.nonlinearity.dyy(x, t, v));
        for ((c, f), p) in curvature.values_mut().iter_mut().zip(fyy.values()).zip(phi.values()) {
            *c -= f * p;
        }
        let mut terminal_curvature = SpatialField::zeros(&grids.space);
        if let Some(lambda) = penalty {
            let sc = spec.state_constraint;
            let active = |v: f64| if sc.violation(v) > 0.0 { lambda } else { 0.0 };
            for (c, v) in curvature.values_mut().iter_mut().zip(y.values()) {
                *c += active(*v);
            }
            for (c, v) in terminal_curvature.values.iter_mut().zip(y.terminal().values) {
                *c = active(v);
            }
        }
        curvature.level_mut(0).fill(0.0);
        Ok(Expansion {
            u: u.clone(),
            state,
            lin,
            phi,
            measure,
            curvature,
            terminal_curvature,
            penalty,
            nu: spec.nu,
        })
    }

    pub fn y(&self) -> &GridFunction {
        &self.state.y
    }

    /// Objective value; includes the penalty terms when penalized, and
    /// never the measure pairing.
    pub fn objective(&self, spec: &ProblemSpec, grids: &Grids) -> f64 {
        let mut j = objective_from_state(spec, grids, &self.u, self.y());
        if let Some(lambda) = self.penalty {
            j += penalty_value(spec, grids, self.y(), lambda);
        }
        j
    }

    /// Riesz representative `φ + νu` of the derivative; level 0 is zero.
    pub fn gradient(&self) -> GridFunction {
        let mut g = self.phi.clone();
        g.axpy(self.nu, &self.u);
        g.level_mut(0).fill(0.0);
        g
    }

    pub fn linearized(&self, v: &GridFunction) -> Result<GridFunction> {
        solve_linearized(&self.lin, v)
    }

    /// Second derivative applied to `(v1, v2)`.
    pub fn bilinear(&self, grids: &Grids, v1: &GridFunction, v2: &GridFunction) -> Result<f64> {
        let z1 = self.linearized(v1)?;
        let z2 = if std::ptr::eq(v1, v2) { z1.clone() } else { self.linearized(v2)? };
        self.bilinear_from(grids, v1, v2, &z1, &z2)
    }

    /// As [`bilinear`](Self::bilinear) with precomputed linearized states.
    pub fn bilinear_from(
        &self,
        grids: &Grids,
        v1: &GridFunction,
        v2: &GridFunction,
        z1: &GridFunction,
        z2: &GridFunction,
    ) -> Result<f64> {
        let n = z1.n_space();
        let w = grids.weight(1);
        let q: f64 = self.curvature.values()[n..]
            .iter()
            .zip(&z1.values()[n..])
            .zip(&z2.values()[n..])
            .map(|((c, a), b)| c * a * b)
            .sum();
        let c = grids.space.cell_volume();
        let t: f64 = self
            .terminal_curvature
            .values
            .iter()
            .zip(z1.terminal().values)
            .zip(z2.terminal().values)
            .map(|((c, a), b)| c * a * b)
            .sum();
        Ok(w * q + c * t + self.nu * grids.inner_product(v1, v2)?)
    }

    pub fn quadform(&self, grids: &Grids, v: &GridFunction) -> Result<f64> {
        self.bilinear(grids, v, v)
    }

    /// Riesz representative of the second derivative applied to `v`.
    pub fn hessian_vec(&self, grids: &Grids, v: &GridFunction) -> Result<GridFunction> {
        let z = self.linearized(v)?;
        let mut s = self.curvature.clone();
        for (s, z) in s.values_mut().iter_mut().zip(z.values()) {
            *s *= z;
        }
        let terminal = SpatialField {
            values: self
                .terminal_curvature
                .values
                .iter()
                .zip(z.terminal().values)
                .map(|(c, z)| c * z)
                .collect(),
        };
        let mut h = self.lin.backward(&s, &terminal)?;
        h.axpy(self.nu, v);
        h.level_mut(0).fill(0.0);
        let _ = grids;
        Ok(h)
    }
}

/// `Σ_Q w L(x, t, y) + ν/2 Σ_Q w u²`.
pub fn objective_from_state(spec: &ProblemSpec, grids: &Grids, u: &GridFunction, y: &GridFunction) -> f64 {
    let dim = grids.space.dim();
    let n = grids.space.interior_len();
    let w = grids.weight(1);
    let mut s = 0.0;
    for k in 1..grids.levels() {
        let t = grids.time.time(k);
        for i in 0..n {
            let p = grids.space.coords(i);
            let uk = u.get(i, k);
            s += spec.running_cost.value(&p[..dim], t, y.get(i, k)) + 0.5 * spec.nu * uk * uk;
        }
    }
    w * s
}

/// `λ/2 Σ_Q w e(y)² + λ/2 Σ_Ω c e(y^{N_t})²` with `e` the constraint excess.
pub fn penalty_value(spec: &ProblemSpec, grids: &Grids, y: &GridFunction, lambda: f64) -> f64 {
    let n = grids.space.interior_len();
    let sc = spec.state_constraint;
    let q: f64 = y.values()[n..].iter().map(|&v| sc.violation(v).powi(2)).sum();
    let t: f64 = y.terminal().values.iter().map(|&v| sc.violation(v).powi(2)).sum();
    0.5 * lambda * (grids.weight(1) * q + grids.space.cell_volume() * t)
}

/// Multiplier estimate `λ·e(y)` as nodal masses; signed for two-sided bounds.
pub fn penalty_measure(spec: &ProblemSpec, grids: &Grids, y: &GridFunction, lambda: f64) -> MeasurePair {
    let sc = spec.state_constraint;
    let w = grids.weight(1);
    let c = grids.space.cell_volume();
    let mut mass_q = y.map(|v| lambda * sc.signed_excess(v) * w);
    mass_q.level_mut(0).fill(0.0);
    let mass_terminal = SpatialField {
        values: y.terminal().values.iter().map(|&v| lambda * sc.signed_excess(v) * c).collect(),
    };
    let sign_mode = if sc.is_bilateral() { SignMode::Signed } else { SignMode::Nonnegative };
    MeasurePair {
        mass_q,
        mass_terminal,
        sign_mode,
    }
}

pub fn objective(spec: &ProblemSpec, grids: &Grids, u: &GridFunction, opts: &ForwardOptions) -> Result<f64> {
    let st = solve_state(spec, grids, u, opts)?;
    Ok(objective_from_state(spec, grids, u, &st.y))
}

pub fn gradient(spec: &ProblemSpec, grids: &Grids, u: &GridFunction, opts: &ForwardOptions) -> Result<GridFunction> {
    Ok(Expansion::new(spec, grids, u, opts)?.gradient())
}

/// `J''(u)[v, v]`.
pub fn quadform(spec: &ProblemSpec, grids: &Grids, u: &GridFunction, v: &GridFunction, opts: &ForwardOptions) -> Result<f64> {
    Expansion::new(spec, grids, u, opts)?.quadform(grids, v)
}

/// `Σ m (y − γ_max)` over nonnegative masses plus `Σ m (y − γ_min)` over
/// negative ones, in the cylinder and on the terminal slice.
pub fn constraint_pairing(spec: &ProblemSpec, grids: &Grids, y: &GridFunction, measure: &MeasurePair) -> f64 {
    let sc = spec.state_constraint;
    let term = |m: f64, v: f64| {
        if m > 0.0 {
            m * (v - sc.upper())
        } else if m < 0.0 {
            m * (v - sc.lower())
        } else {
            0.0
        }
    };
    let n = grids.space.interior_len();
    let q: f64 = measure.mass_q.values()[n..]
        .iter()
        .zip(&y.values()[n..])
        .map(|(&m, &v)| term(m, v))
        .sum();
    let t: f64 = measure
        .mass_terminal
        .values
        .iter()
        .zip(y.terminal().values)
        .map(|(&m, v)| term(m, v))
        .sum();
    q + t
}

pub fn eval_j(spec: &ProblemSpec, grids: &Grids, u: &GridFunction, opts: &ForwardOptions) -> Result<f64> {
    objective(spec, grids, u, opts)
}

pub fn grad_j(spec: &ProblemSpec, grids: &Grids, u: &GridFunction, opts: &ForwardOptions) -> Result<GridFunction> {
    gradient(spec, grids, u, opts)
}

/// `J(u) + Σ (y_u − γ) m_Q + Σ (y_u^{N_t} − γ) m_Ω`.
pub fn lagrangian(
    spec: &ProblemSpec,
    grids: &Grids,
    u: &GridFunction,
    measure: &MeasurePair,
    opts: &ForwardOptions,
) -> Result<f64> {
    crate::adjoint::check_measure_for(spec, grids, measure)?;
    let y = solve_state(spec, grids, u, opts)?.y;
    Ok(objective_from_state(spec, grids, u, &y) + constraint_pairing(spec, grids, &y, measure))
}

pub fn grad_lagrangian(
    spec: &ProblemSpec,
    grids: &Grids,
    u: &GridFunction,
    measure: &MeasurePair,
    opts: &ForwardOptions,
) -> Result<GridFunction> {
    Ok(Expansion::with_measure(spec, grids, u, measure, opts)?.gradient())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadFormSample {
    pub value: f64,
    pub l2_norm_v: f64,
    pub lp_norm_v: f64,
}

/// `∂²𝓛/∂u²(u, μ)[v, v]` with the norms of `v`.
pub fn hess_quadform(
    spec: &ProblemSpec,
    grids: &Grids,
    u: &GridFunction,
    measure: &MeasurePair,
    v: &GridFunction,
    opts: &ForwardOptions,
) -> Result<QuadFormSample> {
    let e = Expansion::with_measure(spec, grids, u, measure, opts)?;
    e.sample(spec, grids, v)
}

impl Expansion {
    pub fn sample(&self, spec: &ProblemSpec, grids: &Grids, v: &GridFunction) -> Result<QuadFormSample> {
        Ok(QuadFormSample {
            value: self.quadform(grids, v)?,
            l2_norm_v: grids.lp_norm(v, 2.0)?,
            lp_norm_v: grids.lp_norm(v, spec.lp_exponent)?,
        })
    }

    /// Cross term `¼[q(v1 + v2) − q(v1 − v2)]`.
    pub fn polarized(&self, grids: &Grids, v1: &GridFunction, v2: &GridFunction) -> Result<f64> {
        Ok(0.25 * (self.quadform(grids, &v1.add(v2))? - self.quadform(grids, &v1.sub(v2))?))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ContinuityRow {
    pub rho: f64,
    /// `‖y_u − ȳ‖_∞` actually reached by the perturbed control.
    pub achieved: f64,
    /// `sup_v |Q(ū)v² − Q(u)v²| / ‖v‖²_{L²}` over the sampled directions.
    pub sup: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct HessianContinuity {
    pub rows: Vec<ContinuityRow>,
    /// Each `sup` is at most 1.1 times the previous one.
    pub monotone: bool,
}

/// For each `ρ`, finds `u = P(ū + s·d)` with `‖y_u − ȳ‖_∞ ≈ ρ` along one
/// fixed smooth direction `d` and compares second derivatives over
/// `n_directions` seeded directions.
#[allow(clippy::too_many_arguments)]
pub fn hessian_continuity_probe(
    spec: &ProblemSpec,
    grids: &Grids,
    u_bar: &GridFunction,
    measure: &MeasurePair,
    radii: &[f64],
    n_directions: usize,
    seed: u64,
    opts: &ForwardOptions,
) -> Result<HessianContinuity> {
    let mut r = rng(seed);
    let d = smooth_unit_field(grids, &mut r);
    let dirs: Vec<GridFunction> = (0..n_directions).map(|_| smooth_unit_field(grids, &mut r)).collect();
    let base = Expansion::with_measure(spec, grids, u_bar, measure, opts)?;
    let base_q: Vec<f64> = dirs.iter().map(|v| base.quadform(grids, v)).collect::<Result<_>>()?;
    let y_bar = base.y().clone();
    let perturbed = |s: f64| {
        let mut u = u_bar.add(&d.scaled(s));
        for x in u.values_mut() {
            *x = spec.bounds.clamp(*x);
        }
        u
    };
    let distance = |s: f64| -> Result<f64> {
        let y = solve_state(spec, grids, &perturbed(s), opts)?.y;
        Ok(y.sub(&y_bar).max_abs())
    };
    let mut rows = Vec::new();
    for &rho in radii {
        // bracket then bisect on s
        let mut lo = 0.0;
        let mut hi = rho;
        let mut dh = distance(hi)?;
        let mut expand = 0;
        while dh < rho && expand < 60 {
            lo = hi;
            hi *= 2.0;
            dh = distance(hi)?;
            expand += 1;
        }
        let mut s = hi;
        let mut achieved = dh;
        for _ in 0..60 {
            if (achieved - rho).abs() <= 1e-3 * rho {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let dm = distance(mid)?;
            if dm < rho {
                lo = mid;
            } else {
                hi = mid;
            }
            s = mid;
            achieved = dm;
        }
        let e = Expansion::with_measure(spec, grids, &perturbed(s), measure, opts)?;
        let mut sup = 0.0f64;
        for (v, qb) in dirs.iter().zip(&base_q) {
            let q = e.quadform(grids, v)?;
            sup = sup.max((q - qb).abs() / grids.lp_norm(v, 2.0)?.powi(2));
        }
        rows.push(ContinuityRow { rho, achieved, sup });
    }
    let monotone = rows.windows(2).all(|w| w[1].sup <= 1.1 * w[0].sup + 1e-14);
    Ok(HessianContinuity { rows, monotone })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckOptions {
    pub directions: usize,
    /// Central difference step `s`.
    pub step: f64,
    /// Largest relative error that passes.
    pub tolerance: f64,
    /// Factor applied to the adjoint before forming `φ + νu`. Anything but 1
    /// gives a wrong gradient on purpose, to exercise failure handling.
    pub adjoint_scale: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            directions: 10,
            step: 1e-4,
            tolerance: 1e-5,
            adjoint_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradCheckRow {
    pub direction: usize,
    /// `⟨φ + νu, v⟩`.
    pub adjoint: f64,
    /// `(F(u + sv) − F(u − sv)) / 2s`.
    pub finite_difference: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    /// Whether `F` is the Lagrangian (a measure was given) or `J`.
    pub lagrangian: bool,
    pub rows: Vec<GradCheckRow>,
    pub max_relative_error: f64,
    pub pass: bool,
}

/// Compares the adjoint gradient of `J`, or of the Lagrangian when `measure`
/// is given, with central differences along seeded smooth directions.
pub fn gradient_check(
    spec: &ProblemSpec,
    grids: &Grids,
    u: &GridFunction,
    measure: Option<&MeasurePair>,
    seed: u64,
    check: &GradCheckOptions,
    opts: &ForwardOptions,
) -> Result<GradCheckReport> {
    if check.directions == 0 || !(check.step > 0.0) {
        return Err(Error::InvalidOption("gradient check needs directions > 0 and step > 0".into()));
    }
    let zero = MeasurePair::zero(grids);
    let m = measure.unwrap_or(&zero);
    let e = Expansion::with_measure(spec, grids, u, m, opts)?;
    let mut g = e.phi.scaled(check.adjoint_scale);
    g.axpy(spec.nu, u);
    g.level_mut(0).fill(0.0);
    let value = |w: &GridFunction| -> Result<f64> {
        match measure {
            Some(m) => lagrangian(spec, grids, w, m, opts),
            None => objective(spec, grids, w, opts),
        }
    };
    let mut r = rng(seed);
    let s = check.step;
    let mut rows = Vec::with_capacity(check.directions);
    for direction in 0..check.directions {
        let v = smooth_unit_field(grids, &mut r);
        let adjoint = grids.inner_product(&g, &v)?;
        let fd = (value(&u.add(&v.scaled(s)))? - value(&u.sub(&v.scaled(s)))?) / (2.0 * s);
        let scale = adjoint.abs().max(fd.abs());
        let relative_error = if scale > 0.0 { (adjoint - fd).abs() / scale } else { 0.0 };
        rows.push(GradCheckRow {
            direction,
            adjoint,
            finite_difference: fd,
            relative_error,
        });
    }
    let max_relative_error = rows.iter().map(|r| r.relative_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        lagrangian: measure.is_some(),
        rows,
        max_relative_error,
        pass: max_relative_error <= check.tolerance,
    })
}
