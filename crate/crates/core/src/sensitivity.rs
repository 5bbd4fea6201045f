//! First and second derivatives of the control-to-state map.

use serde::Serialize;

use crate::error::Result;
use crate::forward::{solve_state, ForwardOptions, Linearization};
use crate::grid::{GridFunction, Grids};
use crate::problem::{PointwiseFn, ProblemSpec};
use crate::random::{rng, smooth_unit_field};

/// `z = S'(u)v`: solves `B_k z^k = z^{k-1}/Δt + v^k`, `z^0 = 0`.
pub fn solve_linearized(lin: &Linearization, v: &GridFunction) -> Result<GridFunction> {
    lin.forward(v)
}

/// `w = S''(u)[v1, v2]` from `z_i = S'(u)v_i`: solves
/// `B_k w^k = w^{k-1}/Δt − f_yy(y^k) z1^k z2^k`, `w^0 = 0`.
pub fn solve_second(
    spec: &ProblemSpec,
    grids: &Grids,
    y: &GridFunction,
    lin: &Linearization,
    z1: &GridFunction,
    z2: &GridFunction,
) -> Result<GridFunction> {
    grids.check(y)?;
    grids.check(z1)?;
    grids.check(z2)?;
    let fyy = pointwise(grids, y, |x, t, v| spec.nonlinearity.dyy(x, t, v));
    let mut r = fyy;
    for ((r, a), b) in r.values_mut().iter_mut().zip(z1.values()).zip(z2.values()) {
        *r = -*r * a * b;
    }
    lin.forward(&r)
}

/// Solves for `S'(u)v` starting from the control alone.
pub fn linearized_state_at(
    spec: &ProblemSpec,
    grids: &Grids,
    u: &GridFunction,
    v: &GridFunction,
    opts: &ForwardOptions,
) -> Result<GridFunction> {
    let st = solve_state(spec, grids, u, opts)?;
    let lin = Linearization::new(spec, grids, &st.y, opts.linear_solver)?;
    solve_linearized(&lin, v)
}

/// Evaluates `g(x, t, y(x, t))` at every node.
pub fn pointwise(grids: &Grids, y: &GridFunction, g: impl Fn(&[f64], f64, f64) -> f64) -> GridFunction {
    let dim = grids.space.dim();
    let n = grids.space.interior_len();
    let mut out = y.clone();
    for k in 0..grids.levels() {
        let t = grids.time.time(k);
        let level = out.level_mut(k);
        for i in 0..n {
            let p = grids.space.coords(i);
            level[i] = g(&p[..dim], t, level[i]);
        }
    }
    out
}

/// Empirical stability constants of the linearized map.
#[derive(Debug, Clone, Serialize)]
pub struct SensitivityBounds {
    /// `‖z‖_{L^10} / ‖v‖_{L²}` per trial.
    pub l10_over_l2: Vec<f64>,
    /// `‖z‖_∞ / ‖v‖_{L^p}` per trial.
    pub linf_over_lp: Vec<f64>,
    pub p: f64,
    /// Max/min spread of each ratio list.
    pub spread: [f64; 2],
    /// All ratios finite and each spread below `1e3`.
    pub stable: bool,
}

/// Records the ratios over `trials` random unit-`L²` directions.
pub fn sensitivity_bounds(
    spec: &ProblemSpec,
    grids: &Grids,
    lin: &Linearization,
    trials: usize,
    seed: u64,
) -> Result<SensitivityBounds> {
    let mut r = rng(seed);
    let p = spec.lp_exponent;
    let mut a = Vec::with_capacity(trials);
    let mut b = Vec::with_capacity(trials);
    for _ in 0..trials {
        let v = smooth_unit_field(grids, &mut r);
        let z = solve_linearized(lin, &v)?;
        a.push(grids.lp_norm(&z, 10.0)? / grids.lp_norm(&v, 2.0)?);
        b.push(grids.lp_norm(&z, f64::INFINITY)? / grids.lp_norm(&v, p)?);
    }
    let spread = |v: &[f64]| {
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        max / min
    };
    let spread = [spread(&a), spread(&b)];
    let stable = a.iter().chain(&b).all(|x| x.is_finite() && *x > 0.0) && spread.iter().all(|s| *s < 1e3);
    Ok(SensitivityBounds {
        l10_over_l2: a,
        linf_over_lp: b,
        p,
        spread,
        stable,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TaylorRow {
    pub step: f64,
    /// `‖y_{u+sv} − y_u − s·z‖_∞`.
    pub first: f64,
    /// `‖y_{u+sv} − y_u − s·z − s²/2·w‖_∞`.
    pub second: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaylorReport {
    pub rows: Vec<TaylorRow>,
    /// Least-squares slopes of `log r` against `log s`.
    pub first_order: f64,
    pub second_order: f64,
}

fn loglog_slope(pts: impl Iterator<Item = (f64, f64)>) -> f64 {
    let pts: Vec<(f64, f64)> = pts.map(|(a, b)| (a.ln(), b.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Remainders of the first- and second-order expansions of the state along
/// `v` for each step `s`, with the nonlinear solve as reference.
pub fn taylor_remainders(
    spec: &ProblemSpec,
    grids: &Grids,
    u: &GridFunction,
    v: &GridFunction,
    steps: &[f64],
    opts: &ForwardOptions,
) -> Result<TaylorReport> {
    if steps.len() < 2 || steps.iter().any(|s| !(*s > 0.0)) {
        return Err(crate::Error::InvalidOption("need at least two positive steps".into()));
    }
    let y = solve_state(spec, grids, u, opts)?.y;
    let lin = Linearization::new(spec, grids, &y, opts.linear_solver)?;
    let z = solve_linearized(&lin, v)?;
    let w = solve_second(spec, grids, &y, &lin, &z, &z)?;
    let mut rows = Vec::with_capacity(steps.len());
    for &s in steps {
        let ys = solve_state(spec, grids, &u.add(&v.scaled(s)), opts)?.y;
        let mut r = ys.sub(&y);
        r.axpy(-s, &z);
        let first = r.max_abs();
        r.axpy(-0.5 * s * s, &w);
        rows.push(TaylorRow {
            step: s,
            first,
            second: r.max_abs(),
        });
    }
    Ok(TaylorReport {
        first_order: loglog_slope(rows.iter().map(|r| (r.step, r.first))),
        second_order: loglog_slope(rows.iter().map(|r| (r.step, r.second))),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::LinearSolver;
    use crate::problem::{Convection, Nonlinearity};

    fn setup() -> (ProblemSpec, Grids, GridFunction, GridFunction) {
        let spec = ProblemSpec::unit(1)
            .with_nonlinearity(Nonlinearity::CubicOdd { coefficient: 2.0 })
            .with_convection(Convection::Constant([0.7, 0.0]));
        let g = spec.grids(&[17], 12).unwrap();
        let u = GridFunction::from_fn(&g, |x, t| 4.0 * (3.0 * x[0]).sin() * (1.0 + t));
        let v = GridFunction::from_fn(&g, |x, t| (x[0] - t).cos());
        (spec, g, u, v)
    }

    #[test]
    fn linearized_state_matches_central_differences() {
        let (spec, g, u, v) = setup();
        let o = ForwardOptions::default();
        let z = linearized_state_at(&spec, &g, &u, &v, &o).unwrap();
        let eps = 1e-5;
        let yp = solve_state(&spec, &g, &u.add(&v.scaled(eps)), &o).unwrap().y;
        let ym = solve_state(&spec, &g, &u.sub(&v.scaled(eps)), &o).unwrap().y;
        let fd = yp.sub(&ym).scaled(0.5 / eps);
        assert!(fd.sub(&z).max_abs() < 1e-7 * z.max_abs());
        assert!(z.level(0).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn second_order_state_matches_differences_of_linearized_states() {
        let (spec, g, u, v1) = setup();
        let v2 = GridFunction::from_fn(&g, |x, t| x[0] * t);
        let o = ForwardOptions::default();
        let y = solve_state(&spec, &g, &u, &o).unwrap().y;
        let lin = Linearization::new(&spec, &g, &y, LinearSolver::Direct).unwrap();
        let z1 = solve_linearized(&lin, &v1).unwrap();
        let z2 = solve_linearized(&lin, &v2).unwrap();
        let w = solve_second(&spec, &g, &y, &lin, &z1, &z2).unwrap();
        let eps = 1e-5;
        let zp = linearized_state_at(&spec, &g, &u.add(&v2.scaled(eps)), &v1, &o).unwrap();
        let zm = linearized_state_at(&spec, &g, &u.sub(&v2.scaled(eps)), &v1, &o).unwrap();
        let fd = zp.sub(&zm).scaled(0.5 / eps);
        assert!(fd.sub(&w).max_abs() < 1e-6 * w.max_abs().max(1e-3));
        // symmetric in its arguments
        let w21 = solve_second(&spec, &g, &y, &lin, &z2, &z1).unwrap();
        assert!(w.sub(&w21).max_abs() < 1e-15);
    }

    #[test]
    fn affine_dynamics_make_the_linearization_exact() {
        let spec = ProblemSpec::unit(1).with_nonlinearity(Nonlinearity::LinearRate { rate: 1.5 });
        let g = spec.grids(&[17], 8).unwrap();
        let u = GridFunction::from_fn(&g, |x, t| x[0] + t);
        let v = GridFunction::from_fn(&g, |x, t| (7.0 * x[0] * t).sin());
        let o = ForwardOptions::default();
        let z = linearized_state_at(&spec, &g, &u, &v, &o).unwrap();
        let d = solve_state(&spec, &g, &u.add(&v), &o).unwrap().y.sub(&solve_state(&spec, &g, &u, &o).unwrap().y);
        assert!(d.sub(&z).max_abs() < 1e-13);
        let zero = linearized_state_at(&spec, &g, &u, &GridFunction::zeros(&g), &o).unwrap();
        assert_eq!(zero.max_abs(), 0.0);
    }

    #[test]
    fn taylor_remainders_have_orders_two_and_three() {
        let (spec, g, u, v) = setup();
        let o = ForwardOptions {
            newton_tol: 1e-14,
            ..Default::default()
        };
        let rep = taylor_remainders(&spec, &g, &u, &v, &[1e-1, 1e-2, 1e-3], &o).unwrap();
        assert!(rep.first_order >= 1.9 && rep.second_order >= 2.9, "{rep:?}");
        assert!(taylor_remainders(&spec, &g, &u, &v, &[1e-1], &o).is_err());
    }

    #[test]
    fn linearization_is_linear() {
        let (spec, g, u, v1) = setup();
        let v2 = GridFunction::from_fn(&g, |x, t| x[0] - t * t);
        let o = ForwardOptions::default();
        let y = solve_state(&spec, &g, &u, &o).unwrap().y;
        let lin = Linearization::new(&spec, &g, &y, LinearSolver::Direct).unwrap();
        let z1 = solve_linearized(&lin, &v1).unwrap();
        let z2 = solve_linearized(&lin, &v2).unwrap();
        let mut comb = v1.scaled(2.0);
        comb.axpy(-3.0, &v2);
        let zc = solve_linearized(&lin, &comb).unwrap();
        let mut expect = z1.scaled(2.0);
        expect.axpy(-3.0, &z2);
        assert!(zc.sub(&expect).max_abs() < 1e-12 * expect.max_abs());
    }

    #[test]
    fn sensitivity_ratios_are_stable_and_homogeneous() {
        let (spec, g, u, _) = setup();
        let o = ForwardOptions::default();
        let y = solve_state(&spec, &g, &u, &o).unwrap().y;
        let lin = Linearization::new(&spec, &g, &y, LinearSolver::Direct).unwrap();
        let rep = sensitivity_bounds(&spec, &g, &lin, 20, 1).unwrap();
        assert!(rep.stable, "{rep:?}");
        let v = crate::random::smooth_unit_field(&g, &mut crate::random::rng(3));
        let z = solve_linearized(&lin, &v).unwrap();
        let z2 = solve_linearized(&lin, &v.scaled(2.0)).unwrap();
        let r1 = g.lp_norm(&z, 10.0).unwrap() / g.lp_norm(&v, 2.0).unwrap();
        let r2 = g.lp_norm(&z2, 10.0).unwrap() / g.lp_norm(&v.scaled(2.0), 2.0).unwrap();
        assert!((r1 - r2).abs() < 1e-12 * r1);
    }
}
