//! Discrete adjoint state with measure data, and the duality identity it
//! satisfies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::Linearization;
use crate::grid::{GridFunction, Grids, SpatialField};
use crate::linalg::LinearSolver;
use crate::problem::{PointwiseFn, ProblemSpec};
use crate::random::{normal_field, rng};
use crate::sensitivity::{pointwise, solve_linearized};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignMode {
    Nonnegative,
    /// Allowed only with two-sided state bounds.
    Signed,
}

/// Discrete measures: nodal masses in the cylinder (levels `1..=N_t`) and
/// on the terminal slice.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurePair {
    pub mass_q: GridFunction,
    pub mass_terminal: SpatialField,
    pub sign_mode: SignMode,
}

impl MeasurePair {
    pub fn zero(grids: &Grids) -> Self {
        MeasurePair {
            mass_q: GridFunction::zeros(grids),
            mass_terminal: SpatialField::zeros(&grids.space),
            sign_mode: SignMode::Nonnegative,
        }
    }

    pub fn new(grids: &Grids, mass_q: GridFunction, mass_terminal: SpatialField, sign_mode: SignMode) -> Result<Self> {
        let m = MeasurePair {
            mass_q,
            mass_terminal,
            sign_mode,
        };
        m.validate(grids)?;
        Ok(m)
    }

    pub fn validate(&self, grids: &Grids) -> Result<()> {
        grids.check(&self.mass_q)?;
        grids.check_spatial(&self.mass_terminal)?;
        if !self.mass_q.is_finite() || self.mass_terminal.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMeasure("masses must be finite".into()));
        }
        if self.mass_q.level(0).iter().any(|&v| v != 0.0) {
            return Err(Error::InvalidMeasure("the cylinder measure must vanish at t = 0".into()));
        }
        if self.sign_mode == SignMode::Nonnegative {
            let neg_q = self.mass_q.values().iter().copied().fold(0.0f64, f64::min);
            let neg_t = self.mass_terminal.values.iter().copied().fold(0.0f64, f64::min);
            if neg_q < 0.0 || neg_t < 0.0 {
                return Err(Error::SignViolation(format!(
                    "nonnegative measure has a negative mass ({:.3e})",
                    neg_q.min(neg_t)
                )));
            }
        }
        Ok(())
    }

    pub fn total_variation(&self) -> f64 {
        self.mass_q.values().iter().map(|v| v.abs()).sum::<f64>()
            + self.mass_terminal.values.iter().map(|v| v.abs()).sum::<f64>()
    }

    pub fn scaled(&self, c: f64) -> MeasurePair {
        MeasurePair {
            mass_q: self.mass_q.scaled(c),
            mass_terminal: SpatialField {
                values: self.mass_terminal.values.iter().map(|v| v * c).collect(),
            },
            sign_mode: self.sign_mode,
        }
    }

    /// `Σ m_Q z + Σ m_Ω z^{N_t}`.
    pub fn pair(&self, z: &GridFunction) -> f64 {
        let n = z.n_space();
        let q: f64 = self.mass_q.values()[n..].iter().zip(&z.values()[n..]).map(|(a, b)| a * b).sum();
        let t: f64 = self.mass_terminal.values.iter().zip(z.terminal().values).map(|(a, b)| a * b).sum();
        q + t
    }
}

/// Checks that `measure` is admissible for `spec`.
pub fn check_measure_for(spec: &ProblemSpec, grids: &Grids, measure: &MeasurePair) -> Result<()> {
    measure.validate(grids)?;
    if measure.sign_mode == SignMode::Signed && !spec.state_constraint.is_bilateral() {
        return Err(Error::InvalidMeasure(
            "signed measures require two-sided state bounds".into(),
        ));
    }
    Ok(())
}

/// Backward solve with running source `L_y(y) + m_Q/(c Δt)` and terminal
/// datum `m_Ω / c`, the latter applied at `N_t + 1`.
pub fn solve_adjoint(
    spec: &ProblemSpec,
    grids: &Grids,
    y: &GridFunction,
    lin: &Linearization,
    measure: &MeasurePair,
) -> Result<GridFunction> {
    check_measure_for(spec, grids, measure)?;
    grids.check(y)?;
    let ly = pointwise(grids, y, |x, t, v| spec.running_cost.dy(x, t, v));
    adjoint_with_running_source(grids, lin, &ly, measure)
}

/// Same as [`solve_adjoint`] with an arbitrary running density in place of
/// `L_y(y)`; passing zero isolates the measure contribution.
pub fn adjoint_with_running_source(
    grids: &Grids,
    lin: &Linearization,
    density: &GridFunction,
    measure: &MeasurePair,
) -> Result<GridFunction> {
    grids.check(density)?;
    let c = grids.space.cell_volume();
    let w = grids.weight(1);
    let mut s = density.clone();
    s.axpy(1.0 / w, &measure.mass_q);
    s.level_mut(0).fill(0.0);
    let terminal = SpatialField {
        values: measure.mass_terminal.values.iter().map(|m| m / c).collect(),
    };
    lin.backward(&s, &terminal)
}

/// Both sides of the duality identity
/// `⟨φ, v⟩_Q = ⟨L_y, z⟩_Q + Σ m_Q z + Σ m_Ω z^{N_t}` with `z = S'(u)v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Duality {
    pub lhs: f64,
    pub rhs: f64,
    /// `|lhs − rhs| / max(1, |lhs|, |rhs|, |individual terms|)`.
    pub relative_residual: f64,
}

pub fn duality(
    spec: &ProblemSpec,
    grids: &Grids,
    y: &GridFunction,
    phi: &GridFunction,
    z: &GridFunction,
    v: &GridFunction,
    measure: &MeasurePair,
) -> Result<Duality> {
    let ly = pointwise(grids, y, |x, t, yv| spec.running_cost.dy(x, t, yv));
    let lhs = grids.inner_product(phi, v)?;
    let t1 = grids.inner_product(&ly, z)?;
    let t2 = measure.pair(z);
    let rhs = t1 + t2;
    let scale = [1.0, lhs.abs(), rhs.abs(), t1.abs(), t2.abs()].into_iter().fold(0.0, f64::max);
    Ok(Duality {
        lhs,
        rhs,
        relative_residual: (lhs - rhs).abs() / scale,
    })
}

/// Largest relative duality gap over `trials` random directions.
#[allow(clippy::too_many_arguments)]
pub fn transposition_residual(
    spec: &ProblemSpec,
    grids: &Grids,
    y: &GridFunction,
    lin: &Linearization,
    phi: &GridFunction,
    measure: &MeasurePair,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let v = normal_field(grids, &mut r);
        let z = solve_linearized(lin, &v)?;
        worst = worst.max(duality(spec, grids, y, phi, &z, &v, measure)?.relative_residual);
    }
    Ok(worst)
}

#[derive(Debug, Clone, Serialize)]
pub struct MeasureStabilityLevel {
    pub nodes: Vec<usize>,
    pub steps: usize,
    /// `‖φ‖_{L^{5/4}(Q)}` of the pure-measure adjoint.
    pub phi_l54: f64,
    /// Reported for information only; not expected to stay bounded.
    pub phi_linf: f64,
    pub total_variation: f64,
    /// `None` when both norms vanish.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MeasureStability {
    pub levels: Vec<MeasureStabilityLevel>,
    /// Largest `|r_i − r_0| / r_0` over the refinements.
    pub drift: Option<f64>,
    pub vacuous: bool,
    pub stable: bool,
}

/// Compares `‖φ‖_{L^{5/4}} / TV(μ)` for the measure-only adjoint on the
/// given grids and `refinements` successively halved grids. The state is
/// interpolated and the masses are injected at coinciding nodes.
pub fn check_measure_stability(
    spec: &ProblemSpec,
    grids: &Grids,
    y: &GridFunction,
    measure: &MeasurePair,
    refinements: usize,
    solver: LinearSolver,
) -> Result<MeasureStability> {
    check_measure_for(spec, grids, measure)?;
    let mut g = grids.clone();
    let mut yk = y.clone();
    let mut mk = measure.clone();
    let mut levels = Vec::new();
    for level in 0..=refinements {
        if level > 0 {
            let fine = g.refined();
            yk = prolong(&g, &fine, &yk);
            mk = inject(&g, &fine, &mk);
            g = fine;
        }
        let lin = Linearization::new(spec, &g, &yk, solver)?;
        let phi = adjoint_with_running_source(&g, &lin, &GridFunction::zeros(&g), &mk)?;
        let phi_l54 = g.lp_norm(&phi, 1.25)?;
        let tv = mk.total_variation();
        let ratio = if tv == 0.0 && phi_l54 == 0.0 { None } else { Some(phi_l54 / tv) };
        levels.push(MeasureStabilityLevel {
            nodes: g.space.nodes().to_vec(),
            steps: g.time.steps(),
            phi_l54,
            phi_linf: g.lp_norm(&phi, f64::INFINITY)?,
            total_variation: tv,
            ratio,
        });
    }
    let vacuous = levels.iter().all(|l| l.ratio.is_none());
    let drift = match levels[0].ratio {
        Some(r0) if r0 > 0.0 => Some(
            levels
                .iter()
                .filter_map(|l| l.ratio)
                .map(|r| (r - r0).abs() / r0)
                .fold(0.0, f64::max),
        ),
        _ => None,
    };
    let stable = vacuous || drift.is_some_and(|d| d < 0.5);
    Ok(MeasureStability {
        levels,
        drift,
        vacuous,
        stable,
    })
}

/// Interior coarse neighbours and weights of fine index `i` along one axis.
fn axis_stencil(i: usize, coarse_len: usize) -> Vec<(usize, f64)> {
    if i % 2 == 1 {
        vec![((i - 1) / 2, 1.0)]
    } else {
        let mut out = Vec::with_capacity(2);
        if i >= 2 {
            out.push((i / 2 - 1, 0.5));
        }
        if i / 2 < coarse_len {
            out.push((i / 2, 0.5));
        }
        out
    }
}

/// Linear interpolation of a coarse field onto the once-refined grids.
pub fn prolong(coarse: &Grids, fine: &Grids, f: &GridFunction) -> GridFunction {
    let [cx, cy] = coarse.space.interior_dims();
    let mut out = GridFunction::zeros(fine);
    let two_d = fine.space.dim() == 2;
    for kf in 0..fine.levels() {
        let times: Vec<(usize, f64)> = if kf % 2 == 0 {
            vec![(kf / 2, 1.0)]
        } else {
            vec![((kf - 1) / 2, 0.5), (kf.div_ceil(2), 0.5)]
        };
        for idx in 0..fine.space.interior_len() {
            let (i, j) = fine.space.unflatten(idx);
            let sx = axis_stencil(i, cx);
            let sy = if two_d { axis_stencil(j, cy) } else { vec![(0, 1.0)] };
            let mut v = 0.0;
            for &(kc, wt) in &times {
                for &(ic, wx) in &sx {
                    for &(jc, wy) in &sy {
                        v += wt * wx * wy * f.get(coarse.space.index(ic, jc), kc);
                    }
                }
            }
            out.set(idx, kf, v);
        }
    }
    out
}

fn inject(coarse: &Grids, fine: &Grids, m: &MeasurePair) -> MeasurePair {
    let two_d = fine.space.dim() == 2;
    let map = |idx: usize| {
        let (i, j) = coarse.space.unflatten(idx);
        fine.space.index(2 * i + 1, if two_d { 2 * j + 1 } else { 0 })
    };
    let mut q = GridFunction::zeros(fine);
    let mut t = SpatialField::zeros(&fine.space);
    for idx in 0..coarse.space.interior_len() {
        for k in 1..coarse.levels() {
            q.set(map(idx), 2 * k, m.mass_q.get(idx, k));
        }
        t.values[map(idx)] = m.mass_terminal.values[idx];
    }
    MeasurePair {
        mass_q: q,
        mass_terminal: t,
        sign_mode: m.sign_mode,
    }
}
