//! Grid refinement studies against a known exact state.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{elliptic_operator, solve_state, state_energy, ForwardOptions};
use crate::grid::{GridFunction, Grids};
use crate::problem::{PointwiseFn, ProblemSpec, SpaceTimeField};

/// Which discretization error the source term leaves in place.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Isolate {
    /// The continuous source `u` at the nodes: both errors remain.
    #[default]
    None,
    /// `u − y*_t + (y*(t_k) − y*(t_{k−1}))/Δt`: the exact state satisfies
    /// the time stepping exactly, so only the spatial error remains.
    Space,
    /// `y*_t + A_h y* + f(y*)`: the exact state satisfies the spatial
    /// discretization exactly, so only the temporal error remains. The
    /// continuous source is not used.
    Time,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinementLevel {
    pub nodes: Vec<usize>,
    pub steps: usize,
    pub h: f64,
    pub dt: f64,
    /// Largest nodal error over levels `1..=N_t`.
    pub max_error: f64,
    /// Observed order in `h` against the previous level, if `h` changed.
    pub order_h: Option<f64>,
    /// Observed order in `Δt` against the previous level, if `Δt` changed.
    pub order_dt: Option<f64>,
    /// [`state_energy`] of the computed state.
    pub state_energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub isolate: Isolate,
    pub levels: Vec<RefinementLevel>,
}

impl ConvergenceTable {
    pub fn min_order_h(&self) -> Option<f64> {
        self.levels.iter().filter_map(|l| l.order_h).reduce(f64::min)
    }

    pub fn min_order_dt(&self) -> Option<f64> {
        self.levels.iter().filter_map(|l| l.order_dt).reduce(f64::min)
    }
}

/// Each level halves `h` or keeps it, and divides `Δt` by a power of two or
/// keeps it, and refines at least one of them.
fn check_nested(levels: &[(Vec<usize>, usize)]) -> Result<()> {
    for w in levels.windows(2) {
        let ((n0, s0), (n1, s1)) = (&w[0], &w[1]);
        if n0.len() != n1.len() {
            return Err(Error::InvalidGrid("levels mix dimensions".into()));
        }
        let ratios: Vec<Option<usize>> = n0
            .iter()
            .zip(n1)
            .map(|(a, b)| (*a >= 2 && (b - 1) % (a - 1) == 0).then(|| (b - 1) / (a - 1)))
            .collect();
        let space_ok = matches!(ratios[0], Some(1) | Some(2)) && ratios.iter().all(|r| *r == ratios[0]);
        let time_ok = s1 % s0 == 0 && (s1 / s0).is_power_of_two();
        if !space_ok || !time_ok || (ratios[0] == Some(1) && s1 == s0) {
            return Err(Error::InvalidGrid(format!(
                "levels are not nested: {n0:?}x{s0} then {n1:?}x{s1}"
            )));
        }
    }
    Ok(())
}

/// `∂_t y*` by central differences.
fn time_derivative(exact: &SpaceTimeField, x: &[f64], t: f64) -> f64 {
    let d = 1e-6 * t.abs().max(1.0);
    (exact.eval(x, t + d) - exact.eval(x, t - d)) / (2.0 * d)
}

fn source(spec: &ProblemSpec, grids: &Grids, control: &SpaceTimeField, exact: &SpaceTimeField, isolate: Isolate) -> GridFunction {
    let dt = grids.time.dt();
    match isolate {
        Isolate::None => GridFunction::from_fn(grids, |x, t| control.eval(x, t)),
        Isolate::Space => GridFunction::from_fn(grids, |x, t| {
            control.eval(x, t) - time_derivative(exact, x, t) + (exact.eval(x, t) - exact.eval(x, t - dt)) / dt
        }),
        Isolate::Time => {
            let dim = grids.space.dim();
            let ys = GridFunction::from_fn(grids, |x, t| exact.eval(x, t));
            let mut u = GridFunction::from_fn(grids, |x, t| time_derivative(exact, x, t));
            let mut ay = vec![0.0; grids.space.interior_len()];
            for k in 1..grids.levels() {
                let t = grids.time.time(k);
                elliptic_operator(spec, &grids.space, t).matvec(ys.level(k), &mut ay);
                let yk = ys.level(k).to_vec();
                for (i, v) in u.level_mut(k).iter_mut().enumerate() {
                    let p = grids.space.coords(i);
                    *v += ay[i] + spec.nonlinearity.value(&p[..dim], t, yk[i]);
                }
            }
            u
        }
    }
}

/// Solves the state equation on each level with the source selected by
/// `isolate` and compares with `exact` at the nodes.
pub fn convergence_study(
    spec: &ProblemSpec,
    levels: &[(Vec<usize>, usize)],
    control: &SpaceTimeField,
    exact: &SpaceTimeField,
    isolate: Isolate,
    opts: &ForwardOptions,
) -> Result<ConvergenceTable> {
    if levels.is_empty() {
        return Err(Error::InvalidGrid("no refinement levels given".into()));
    }
    check_nested(levels)?;
    let mut out: Vec<RefinementLevel> = Vec::with_capacity(levels.len());
    for (nodes, steps) in levels {
        let grids = spec.grids(nodes, *steps)?;
        let u = source(spec, &grids, control, exact, isolate);
        let y = solve_state(spec, &grids, &u, opts)?.y;
        let e = GridFunction::from_fn(&grids, |x, t| exact.eval(x, t));
        let n = grids.space.interior_len();
        let max_error = y.values()[n..]
            .iter()
            .zip(&e.values()[n..])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let h = grids.space.spacing()[0];
        let dt = grids.time.dt();
        let (order_h, order_dt) = match out.last() {
            Some(prev) => {
                let rate = (prev.max_error / max_error).ln();
                (
                    (prev.h != h).then(|| rate / (prev.h / h).ln()),
                    (prev.dt != dt).then(|| rate / (prev.dt / dt).ln()),
                )
            }
            None => (None, None),
        };
        out.push(RefinementLevel {
            nodes: nodes.clone(),
            steps: *steps,
            h,
            dt,
            max_error,
            order_h,
            order_dt,
            state_energy: state_energy(spec, &grids, &y)?,
        });
    }
    Ok(ConvergenceTable { isolate, levels: out })
}
