//! Data of the control problem: operator coefficients, nonlinearity, running
//! cost, Tikhonov weight, control bounds, state constraints and initial state.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::grid::{GridFunction, Grids, SpatialField, SpatialGrid, TimeGrid};

/// A scalar function of `(x, t, y)` together with its first two
/// `y`-derivatives. Implementations must be deterministic and pointwise.
pub trait PointwiseFn: Send + Sync {
    fn value(&self, x: &[f64], t: f64, y: f64) -> f64;
    fn dy(&self, x: &[f64], t: f64, y: f64) -> f64;
    fn dyy(&self, x: &[f64], t: f64, y: f64) -> f64;
}

/// A named function of `(x, t)`.
type ScalarFn = dyn Fn(&[f64], f64) -> f64 + Send + Sync;
type VectorFn = dyn Fn(&[f64], f64) -> [f64; 2] + Send + Sync;

#[derive(Clone)]
pub struct SpaceTimeField {
    label: String,
    func: Arc<ScalarFn>,
}

impl SpaceTimeField {
    pub fn new(label: impl Into<String>, func: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static) -> Self {
        SpaceTimeField {
            label: label.into(),
            func: Arc::new(func),
        }
    }

    pub fn constant(c: f64) -> Self {
        SpaceTimeField::new(format!("{c}"), move |_, _| c)
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn from_expr(src: &str) -> Result<Self> {
        let e = Expr::parse(src)?;
        Ok(SpaceTimeField::new(src, move |x, t| e.eval(x, t)))
    }

    pub fn eval(&self, x: &[f64], t: f64) -> f64 {
        (self.func)(x, t)
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

impl fmt::Debug for SpaceTimeField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SpaceTimeField({})", self.label)
    }
}

/// A user-supplied [`PointwiseFn`] with a label for reports.
#[derive(Clone)]
pub struct CustomFn {
    pub label: String,
    pub func: Arc<dyn PointwiseFn>,
}

impl fmt::Debug for CustomFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CustomFn({})", self.label)
    }
}

/// The semilinear term `f(x, t, y)` of the state equation.
#[derive(Debug, Clone)]
pub enum Nonlinearity {
    Zero,
    /// `f = c·y`
    LinearRate { rate: f64 },
    /// `f = c·y³`, `c > 0`
    CubicOdd { coefficient: f64 },
    /// `f = g(x,t)·exp(y)`, `g ≥ 0`
    ExpWeighted { weight: SpaceTimeField },
    Custom(CustomFn),
}

impl Nonlinearity {
    pub fn name(&self) -> &str {
        match self {
            Nonlinearity::Zero => "zero",
            Nonlinearity::LinearRate { .. } => "linear",
            Nonlinearity::CubicOdd { .. } => "cubic",
            Nonlinearity::ExpWeighted { .. } => "exp",
            Nonlinearity::Custom(c) => &c.label,
        }
    }

    /// True if the second derivative in `y` vanishes identically.
    pub fn is_affine(&self) -> bool {
        matches!(self, Nonlinearity::Zero | Nonlinearity::LinearRate { .. })
    }
}

impl PointwiseFn for Nonlinearity {
    fn value(&self, x: &[f64], t: f64, y: f64) -> f64 {
        match self {
            Nonlinearity::Zero => 0.0,
            Nonlinearity::LinearRate { rate } => rate * y,
            Nonlinearity::CubicOdd { coefficient } => coefficient * y * y * y,
            Nonlinearity::ExpWeighted { weight } => weight.eval(x, t) * y.exp(),
            Nonlinearity::Custom(c) => c.func.value(x, t, y),
        }
    }

    fn dy(&self, x: &[f64], t: f64, y: f64) -> f64 {
        match self {
            Nonlinearity::Zero => 0.0,
            Nonlinearity::LinearRate { rate } => *rate,
            Nonlinearity::CubicOdd { coefficient } => 3.0 * coefficient * y * y,
            Nonlinearity::ExpWeighted { weight } => weight.eval(x, t) * y.exp(),
            Nonlinearity::Custom(c) => c.func.dy(x, t, y),
        }
    }

    fn dyy(&self, x: &[f64], t: f64, y: f64) -> f64 {
        match self {
            Nonlinearity::Zero | Nonlinearity::LinearRate { .. } => 0.0,
            Nonlinearity::CubicOdd { coefficient } => 6.0 * coefficient * y,
            Nonlinearity::ExpWeighted { weight } => weight.eval(x, t) * y.exp(),
            Nonlinearity::Custom(c) => c.func.dyy(x, t, y),
        }
    }
}

/// The running cost `L(x, t, y)`.
#[derive(Debug, Clone)]
pub enum RunningCost {
    Zero,
    /// `L = (w/2)·(y − y_d(x,t))²`. A negative weight gives a concave cost.
    Tracking { target: SpaceTimeField, weight: f64 },
    Custom(CustomFn),
}

impl RunningCost {
    pub fn tracking(target: SpaceTimeField) -> Self {
        RunningCost::Tracking { target, weight: 1.0 }
    }
}

impl PointwiseFn for RunningCost {
    fn value(&self, x: &[f64], t: f64, y: f64) -> f64 {
        match self {
            RunningCost::Zero => 0.0,
            RunningCost::Tracking { target, weight } => {
                let d = y - target.eval(x, t);
                0.5 * weight * d * d
            }
            RunningCost::Custom(c) => c.func.value(x, t, y),
        }
    }

    fn dy(&self, x: &[f64], t: f64, y: f64) -> f64 {
        match self {
            RunningCost::Zero => 0.0,
            RunningCost::Tracking { target, weight } => weight * (y - target.eval(x, t)),
            RunningCost::Custom(c) => c.func.dy(x, t, y),
        }
    }

    fn dyy(&self, x: &[f64], t: f64, y: f64) -> f64 {
        match self {
            RunningCost::Zero => 0.0,
            RunningCost::Tracking { weight, .. } => *weight,
            RunningCost::Custom(c) => c.func.dyy(x, t, y),
        }
    }
}

/// First-order coefficients `b_j(x, t)` of the elliptic operator.
#[derive(Clone, Default)]
pub enum Convection {
    #[default]
    None,
    Constant([f64; 2]),
    Field {
        label: String,
        func: Arc<VectorFn>,
    },
}

impl Convection {
    pub fn eval(&self, x: &[f64], t: f64) -> [f64; 2] {
        match self {
            Convection::None => [0.0, 0.0],
            Convection::Constant(b) => *b,
            Convection::Field { func, .. } => func(x, t),
        }
    }

    pub fn is_none(&self) -> bool {
        match self {
            Convection::None => true,
            Convection::Constant(b) => b[0] == 0.0 && b[1] == 0.0,
            Convection::Field { .. } => false,
        }
    }
}

impl fmt::Debug for Convection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Convection::None => write!(f, "None"),
            Convection::Constant(b) => write!(f, "Constant({b:?})"),
            Convection::Field { label, .. } => write!(f, "Field({label})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StateConstraint {
    /// `y ≤ γ` with `γ > 0`.
    Upper { gamma: f64 },
    /// `γ_min ≤ y ≤ γ_max` with `γ_min < 0 < γ_max`.
    Bilateral { lower: f64, upper: f64 },
}

impl StateConstraint {
    pub fn is_bilateral(&self) -> bool {
        matches!(self, StateConstraint::Bilateral { .. })
    }

    pub fn upper(&self) -> f64 {
        match *self {
            StateConstraint::Upper { gamma } => gamma,
            StateConstraint::Bilateral { upper, .. } => upper,
        }
    }

    pub fn lower(&self) -> f64 {
        match *self {
            StateConstraint::Upper { .. } => f64::NEG_INFINITY,
            StateConstraint::Bilateral { lower, .. } => lower,
        }
    }

    /// Amount by which `y` leaves the feasible interval (zero if feasible).
    pub fn violation(&self, y: f64) -> f64 {
        (y - self.upper()).max(self.lower() - y).max(0.0)
    }

    /// Signed Moreau–Yosida residual `max(0, y−γ_max) − max(0, γ_min−y)`.
    pub fn signed_excess(&self, y: f64) -> f64 {
        (y - self.upper()).max(0.0) - (self.lower() - y).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlBounds {
    pub lower: f64,
    pub upper: f64,
}

impl ControlBounds {
    pub fn new(lower: f64, upper: f64) -> Self {
        ControlBounds { lower, upper }
    }

    pub fn unbounded() -> Self {
        ControlBounds::new(f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.max(self.lower).min(self.upper)
    }
}

/// Full data of the control problem on `Ω = (0, L_1) [× (0, L_2)]`, horizon `T`.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub lengths: Vec<f64>,
    pub horizon: f64,
    /// Constant diffusion matrix `a_ij`; only the leading `n×n` block is used.
    pub diffusion: [[f64; 2]; 2],
    pub convection: Convection,
    pub nonlinearity: Nonlinearity,
    pub running_cost: RunningCost,
    pub nu: f64,
    pub bounds: ControlBounds,
    pub state_constraint: StateConstraint,
    /// `y_0(x)`; the time argument is ignored.
    pub initial_state: SpaceTimeField,
    /// Lower bound `C_f` of `∂f/∂y`, used for the step-size guard.
    pub monotonicity_floor: f64,
    /// Exponent `p` of the cone norms.
    pub lp_exponent: f64,
}

impl ProblemSpec {
    /// Unit interval/square, `T = 1`, `a = I`, `ν = 1`, `u ∈ [0, 1]`,
    /// `y ≤ 1`, `y_0 = 0`, no nonlinearity, no running cost.
    pub fn unit(dim: usize) -> Self {
        ProblemSpec {
            lengths: vec![1.0; dim],
            horizon: 1.0,
            diffusion: [[1.0, 0.0], [0.0, 1.0]],
            convection: Convection::None,
            nonlinearity: Nonlinearity::Zero,
            running_cost: RunningCost::Zero,
            nu: 1.0,
            bounds: ControlBounds::new(0.0, 1.0),
            state_constraint: StateConstraint::Upper { gamma: 1.0 },
            initial_state: SpaceTimeField::zero(),
            monotonicity_floor: 0.0,
            lp_exponent: if dim >= 2 { 3.0 } else { 2.0 },
        }
    }

    pub fn dim(&self) -> usize {
        self.lengths.len()
    }

    pub fn with_nonlinearity(mut self, f: Nonlinearity) -> Self {
        self.monotonicity_floor = match &f {
            Nonlinearity::LinearRate { rate } => rate.min(0.0),
            Nonlinearity::Custom(_) => self.monotonicity_floor,
            _ => 0.0,
        };
        self.nonlinearity = f;
        self
    }

    pub fn with_running_cost(mut self, l: RunningCost) -> Self {
        self.running_cost = l;
        self
    }

    pub fn with_nu(mut self, nu: f64) -> Self {
        self.nu = nu;
        self
    }

    pub fn with_bounds(mut self, lower: f64, upper: f64) -> Self {
        self.bounds = ControlBounds::new(lower, upper);
        self
    }

    pub fn with_state_constraint(mut self, c: StateConstraint) -> Self {
        self.state_constraint = c;
        self
    }

    pub fn with_initial_state(mut self, y0: SpaceTimeField) -> Self {
        self.initial_state = y0;
        self
    }

    pub fn with_diffusion(mut self, a: [[f64; 2]; 2]) -> Self {
        self.diffusion = a;
        self
    }

    pub fn with_convection(mut self, b: Convection) -> Self {
        self.convection = b;
        self
    }

    /// Grids on this problem's domain and horizon.
    pub fn grids(&self, nodes_per_axis: &[usize], steps: usize) -> Result<Grids> {
        if nodes_per_axis.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "problem is {}-dimensional but {} node counts were given",
                self.dim(),
                nodes_per_axis.len()
            )));
        }
        Ok(Grids::new(
            SpatialGrid::new(nodes_per_axis, &self.lengths)?,
            TimeGrid::new(self.horizon, steps)?,
        ))
    }

    /// Checks that `grids` discretize this problem's domain.
    pub fn check_grids(&self, grids: &Grids) -> Result<()> {
        let ok = grids.space.dim() == self.dim()
            && grids
                .space
                .lengths()
                .iter()
                .zip(&self.lengths)
                .all(|(a, b)| (a - b).abs() <= 1e-12 * b.abs())
            && (grids.time.horizon() - self.horizon).abs() <= 1e-12 * self.horizon;
        if ok {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "grids cover {:?} x (0, {}) but the problem is posed on {:?} x (0, {})",
                grids.space.lengths(),
                grids.time.horizon(),
                self.lengths,
                self.horizon
            )))
        }
    }

    /// Smallest eigenvalue of the symmetric part of the diffusion matrix.
    pub fn ellipticity_constant(&self) -> f64 {
        let a = &self.diffusion;
        if self.dim() == 1 {
            return a[0][0];
        }
        let off = 0.5 * (a[0][1] + a[1][0]);
        let mean = 0.5 * (a[0][0] + a[1][1]);
        let half_diff = 0.5 * (a[0][0] - a[1][1]);
        mean - (half_diff * half_diff + off * off).sqrt()
    }

    pub fn initial_state_on(&self, grid: &SpatialGrid) -> SpatialField {
        SpatialField::from_fn(grid, |x| self.initial_state.eval(x, 0.0))
    }

    /// Checks every structural assumption that can be checked from data;
    /// an empty list means the data is valid. Growth conditions on `f` and
    /// `L` are the caller's responsibility.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let n = self.dim();
        if !(1..=2).contains(&n)
            || self.lengths.iter().any(|l| !(*l > 0.0 && l.is_finite()))
            || !(self.horizon > 0.0 && self.horizon.is_finite())
        {
            out.push(Violation::Geometry {
                dim: n,
                horizon: self.horizon,
            });
            return out;
        }

        let lambda_a = self.ellipticity_constant();
        if !(lambda_a > 0.0) {
            out.push(Violation::NotElliptic {
                smallest_eigenvalue: lambda_a,
            });
        }

        if !(self.nu > 0.0 && self.nu.is_finite()) {
            out.push(Violation::NonPositiveTikhonov { nu: self.nu });
        }

        let ControlBounds { lower, upper } = self.bounds;
        if !(lower < upper) || lower.is_nan() || upper.is_nan() || lower == f64::INFINITY || upper == f64::NEG_INFINITY {
            out.push(Violation::EmptyControlBox { lower, upper });
        }
        if n >= 2 && (lower.is_infinite() || upper.is_infinite()) {
            out.push(Violation::UnboundedControls { dim: n });
        }

        match self.state_constraint {
            StateConstraint::Upper { gamma } => {
                if !(gamma > 0.0) {
                    out.push(Violation::StateBound {
                        lower: f64::NEG_INFINITY,
                        upper: gamma,
                    });
                }
            }
            StateConstraint::Bilateral { lower, upper } => {
                if !(lower < 0.0 && 0.0 < upper) {
                    out.push(Violation::StateBound { lower, upper });
                }
            }
        }

        let required = if n >= 2 { 1.0 + n as f64 / 2.0 } else { 2.0 };
        let p = self.lp_exponent;
        let p_ok = if n >= 2 { p > required } else { p >= required };
        if !p_ok || p.is_nan() {
            out.push(Violation::Exponent { p, dim: n });
        }

        match &self.nonlinearity {
            Nonlinearity::CubicOdd { coefficient } if !(*coefficient > 0.0) => {
                out.push(Violation::Preset(format!(
                    "cubic nonlinearity needs a positive leading coefficient, got {coefficient}"
                )));
            }
            Nonlinearity::ExpWeighted { weight } => {
                for (x, t) in self.sample_lattice(9) {
                    let g = weight.eval(&x[..n], t);
                    if !(g >= 0.0) {
                        out.push(Violation::Preset(format!(
                            "exponential nonlinearity weight is negative ({g}) at x={:?}, t={t}",
                            &x[..n]
                        )));
                        break;
                    }
                }
            }
            _ => {}
        }

        // f_y >= C_f spot check on a lattice of (x, t, y)
        'outer: for (x, t) in self.sample_lattice(9) {
            for j in 0..=20 {
                let y = -10.0 + j as f64;
                let fy = self.nonlinearity.dy(&x[..n], t, y);
                if !(fy >= self.monotonicity_floor - 1e-12 * self.monotonicity_floor.abs()) {
                    out.push(Violation::MonotonicityFloor {
                        x: x[..n].to_vec(),
                        t,
                        y,
                        dy: fy,
                        floor: self.monotonicity_floor,
                    });
                    break 'outer;
                }
            }
        }

        // initial state: strictly feasible inside, zero on the boundary
        let lo = self.state_constraint.lower();
        let hi = self.state_constraint.upper();
        for (x, _) in self.sample_lattice(33) {
            let v = self.initial_state.eval(&x[..n], 0.0);
            if !(v < hi && v > lo) {
                out.push(Violation::InitialStateInfeasible {
                    x: x[..n].to_vec(),
                    value: v,
                });
                break;
            }
        }
        for x in self.boundary_samples(17) {
            let v = self.initial_state.eval(&x[..n], 0.0);
            if v.abs() > 1e-10 {
                out.push(Violation::InitialStateBoundary {
                    x: x[..n].to_vec(),
                    value: v,
                });
                break;
            }
        }
        out
    }

    /// Standing assumptions that [`validate`](Self::validate) cannot decide
    /// from nodal samples. Reports list them so a clean validation is not
    /// read as a proof.
    pub fn unchecked_assumptions(&self) -> Vec<&'static str> {
        vec!["integrability of f(x, t, 0) beyond finiteness at the sampled points"]
    }

    /// Returns `Err(InvalidProblem)` unless [`validate`](Self::validate) is clean.
    pub fn ensure_valid(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidProblem(v))
        }
    }

    /// Interior lattice points of the space-time cylinder.
    fn sample_lattice(&self, per_axis: usize) -> Vec<([f64; 2], f64)> {
        let n = self.dim();
        let axis = |len: f64| -> Vec<f64> {
            (1..per_axis).map(|i| len * i as f64 / per_axis as f64).collect()
        };
        let xs = axis(self.lengths[0]);
        let ys = if n == 2 { axis(self.lengths[1]) } else { vec![0.0] };
        let ts: Vec<f64> = (0..=4).map(|k| self.horizon * k as f64 / 4.0).collect();
        let mut out = Vec::new();
        for &t in &ts {
            for &y in &ys {
                for &x in &xs {
                    out.push(([x, y], t));
                }
            }
        }
        out
    }

    fn boundary_samples(&self, per_side: usize) -> Vec<[f64; 2]> {
        let l = &self.lengths;
        if self.dim() == 1 {
            return vec![[0.0, 0.0], [l[0], 0.0]];
        }
        let mut out = Vec::new();
        for i in 0..=per_side {
            let s = i as f64 / per_side as f64;
            out.push([s * l[0], 0.0]);
            out.push([s * l[0], l[1]]);
            out.push([0.0, s * l[1]]);
            out.push([l[0], s * l[1]]);
        }
        out
    }

    /// True iff the control bounds hold on levels `1..=N_t` and the state
    /// constraint holds at every node, both within `tol`.
    pub fn admissible(&self, grids: &Grids, u: &GridFunction, y: &GridFunction, tol: f64) -> Result<bool> {
        grids.check(u)?;
        grids.check(y)?;
        let n = grids.space.interior_len();
        let b = self.bounds;
        let controls_ok = u.values()[n..]
            .iter()
            .all(|&v| v >= b.lower - tol && v <= b.upper + tol);
        let states_ok = y.values().iter().all(|&v| self.state_constraint.violation(v) <= tol);
        Ok(controls_ok && states_ok)
    }
}

/// A breached assumption reported by [`ProblemSpec::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Geometry { dim: usize, horizon: f64 },
    NotElliptic { smallest_eigenvalue: f64 },
    NonPositiveTikhonov { nu: f64 },
    EmptyControlBox { lower: f64, upper: f64 },
    UnboundedControls { dim: usize },
    StateBound { lower: f64, upper: f64 },
    Exponent { p: f64, dim: usize },
    Preset(String),
    MonotonicityFloor { x: Vec<f64>, t: f64, y: f64, dy: f64, floor: f64 },
    InitialStateInfeasible { x: Vec<f64>, value: f64 },
    InitialStateBoundary { x: Vec<f64>, value: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Geometry { dim, horizon } => write!(
                f,
                "domain must be an interval or rectangle with positive sides and positive horizon (dim {dim}, T {horizon})"
            ),
            Violation::NotElliptic { smallest_eigenvalue } => write!(
                f,
                "diffusion matrix is not uniformly elliptic (smallest eigenvalue of symmetric part {smallest_eigenvalue})"
            ),
            Violation::NonPositiveTikhonov { nu } => {
                write!(f, "Tikhonov weight must be positive, got {nu}")
            }
            Violation::EmptyControlBox { lower, upper } => {
                write!(f, "control bounds must satisfy lower < upper, got [{lower}, {upper}]")
            }
            Violation::UnboundedControls { dim } => {
                write!(f, "finite control bounds are required in dimension {dim} >= 2")
            }
            Violation::StateBound { lower, upper } => write!(
                f,
                "state bounds must straddle zero (lower < 0 < upper), got [{lower}, {upper}]"
            ),
            Violation::Exponent { p, dim } => {
                if *dim >= 2 {
                    write!(f, "cone exponent p must exceed 1 + n/2 = {}, got {p}", 1.0 + *dim as f64 / 2.0)
                } else {
                    write!(f, "cone exponent p must be at least 2 in dimension 1, got {p}")
                }
            }
            Violation::Preset(msg) => f.write_str(msg),
            Violation::MonotonicityFloor { x, t, y, dy, floor } => write!(
                f,
                "df/dy = {dy} is below the declared floor {floor} at x={x:?}, t={t}, y={y}"
            ),
            Violation::InitialStateInfeasible { x, value } => write!(
                f,
                "initial state {value} at x={x:?} is not strictly inside the state bounds"
            ),
            Violation::InitialStateBoundary { x, value } => {
                write!(f, "initial state must vanish on the boundary, got {value} at x={x:?}")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_spec_is_valid() {
        assert!(ProblemSpec::unit(1).validate().is_empty());
        assert!(ProblemSpec::unit(2).validate().is_empty());
    }

    #[test]
    fn indefinite_diffusion_is_reported() {
        let s = ProblemSpec::unit(2).with_diffusion([[1.0, 0.0], [0.0, -1.0]]);
        let v = s.validate();
        assert_eq!(v.len(), 1);
        assert!(matches!(v[0], Violation::NotElliptic { smallest_eigenvalue } if smallest_eigenvalue == -1.0));
    }

    #[test]
    fn unbounded_controls_only_allowed_in_one_dimension() {
        let s = ProblemSpec::unit(2).with_bounds(f64::NEG_INFINITY, 1.0);
        assert!(s.validate().contains(&Violation::UnboundedControls { dim: 2 }));
        let s = ProblemSpec::unit(1).with_bounds(f64::NEG_INFINITY, f64::INFINITY);
        assert!(s.validate().is_empty());
    }

    #[test]
    fn zero_tikhonov_weight_is_rejected() {
        let v = ProblemSpec::unit(1).with_nu(0.0).validate();
        assert!(matches!(v[..], [Violation::NonPositiveTikhonov { .. }]));
    }

    #[test]
    fn other_violations() {
        let s = ProblemSpec::unit(1).with_bounds(1.0, 1.0);
        assert!(matches!(s.validate()[..], [Violation::EmptyControlBox { .. }]));

        let s = ProblemSpec::unit(1).with_state_constraint(StateConstraint::Bilateral { lower: 0.5, upper: 1.0 });
        assert!(matches!(s.validate()[..], [Violation::StateBound { .. }, Violation::InitialStateInfeasible { .. }]));

        let mut s = ProblemSpec::unit(2);
        s.lp_exponent = 2.0;
        assert!(matches!(s.validate()[..], [Violation::Exponent { .. }]));

        let s = ProblemSpec::unit(1).with_nonlinearity(Nonlinearity::CubicOdd { coefficient: -1.0 });
        let v = s.validate();
        assert!(v.iter().any(|x| matches!(x, Violation::Preset(_))));

        let s = ProblemSpec::unit(1).with_initial_state(SpaceTimeField::new("2 sin", |x, _| {
            2.0 * (std::f64::consts::PI * x[0]).sin()
        }));
        assert!(matches!(s.validate()[..], [Violation::InitialStateInfeasible { .. }]));

        let s = ProblemSpec::unit(1).with_initial_state(SpaceTimeField::constant(0.5));
        assert!(matches!(s.validate()[..], [Violation::InitialStateBoundary { .. }]));

        let mut s = ProblemSpec::unit(1).with_nonlinearity(Nonlinearity::LinearRate { rate: -2.0 });
        assert!(s.validate().is_empty());
        s.monotonicity_floor = -1.0;
        assert!(matches!(s.validate()[..], [Violation::MonotonicityFloor { .. }]));

        let s = ProblemSpec::unit(1).with_nonlinearity(Nonlinearity::ExpWeighted {
            weight: SpaceTimeField::new("x-0.5", |x, _| x[0] - 0.5),
        });
        assert!(s.validate().iter().any(|x| matches!(x, Violation::Preset(_))));
    }

    #[test]
    fn validate_is_idempotent() {
        let s = ProblemSpec::unit(2).with_diffusion([[1.0, 0.0], [0.0, -1.0]]).with_nu(-1.0);
        assert_eq!(s.validate(), s.validate());
    }

    #[test]
    fn ellipticity_of_symmetric_part() {
        // skew part does not count
        let s = ProblemSpec::unit(2).with_diffusion([[2.0, 5.0], [-5.0, 1.0]]);
        assert!((s.ellipticity_constant() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn admissibility() {
        let s = ProblemSpec::unit(1);
        let g = s.grids(&[9], 4).unwrap();
        let tol = 1e-8;
        let u = GridFunction::constant(&g, 0.5);
        let mut y = GridFunction::zeros(&g);
        assert!(s.admissible(&g, &u, &y, tol).unwrap());
        y.set(3, 2, 1.0 + 2.0 * tol);
        assert!(!s.admissible(&g, &u, &y, tol).unwrap());
        assert!(s.admissible(&g, &u, &y, 3.0 * tol).unwrap());

        let b = s.clone().with_state_constraint(StateConstraint::Bilateral { lower: -0.5, upper: 1.0 });
        let y = GridFunction::constant(&g, -0.5 - 2.0 * tol);
        assert!(!b.admissible(&g, &u, &y, tol).unwrap());
    }

    #[test]
    fn admissible_at_zero_tol_implies_any_tol() {
        let s = ProblemSpec::unit(1);
        let g = s.grids(&[9], 4).unwrap();
        let u = GridFunction::from_fn(&g, |x, t| x[0] * t);
        let y = GridFunction::from_fn(&g, |x, _| x[0]);
        assert!(s.admissible(&g, &u, &y, 0.0).unwrap());
        for tol in [1e-12, 1e-3, 1.0] {
            assert!(s.admissible(&g, &u, &y, tol).unwrap());
        }
    }

    #[test]
    fn preset_derivatives_match_finite_differences() {
        let presets = [
            Nonlinearity::LinearRate { rate: 0.7 },
            Nonlinearity::CubicOdd { coefficient: 2.0 },
            Nonlinearity::ExpWeighted {
                weight: SpaceTimeField::new("1+x", |x, _| 1.0 + x[0]),
            },
        ];
        let x = [0.3];
        for f in presets {
            for y in [-1.0, 0.2, 1.3] {
                let h = 1e-5;
                let d1 = (f.value(&x, 0.5, y + h) - f.value(&x, 0.5, y - h)) / (2.0 * h);
                let d2 = (f.dy(&x, 0.5, y + h) - f.dy(&x, 0.5, y - h)) / (2.0 * h);
                assert!((d1 - f.dy(&x, 0.5, y)).abs() < 1e-7, "{}", f.name());
                assert!((d2 - f.dyy(&x, 0.5, y)).abs() < 1e-7, "{}", f.name());
            }
        }
    }
}
