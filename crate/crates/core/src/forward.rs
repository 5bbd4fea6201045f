//! Spatial operator assembly and the backward-Euler/Newton state solver.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridFunction, Grids, SpatialField, SpatialGrid};
use crate::linalg::{CsrMatrix, LinearSolver, StepSolver};
use crate::problem::{PointwiseFn, ProblemSpec};

/// Finite-difference matrix of `A` on the interior nodes at time `t`.
///
/// Second-order central differences; the mixed derivative uses the
/// symmetrized off-diagonal coefficient on the four diagonal neighbours.
pub fn elliptic_operator(spec: &ProblemSpec, space: &SpatialGrid, t: f64) -> CsrMatrix {
    let [mx, my] = space.interior_dims();
    let h = space.spacing();
    let a = &spec.diffusion;
    let dim = space.dim();
    let rows = (0..space.interior_len())
        .map(|idx| {
            let (i, j) = space.unflatten(idx);
            let p = space.coords(idx);
            let b = spec.convection.eval(&p[..dim], t);
            let mut row = Vec::with_capacity(9);
            let ax = a[0][0] / (h[0] * h[0]);
            let cx = b[0] / (2.0 * h[0]);
            let mut diag = 2.0 * ax;
            if i > 0 {
                row.push((idx - 1, -ax - cx));
            }
            if i + 1 < mx {
                row.push((idx + 1, -ax + cx));
            }
            if dim == 2 {
                let ay = a[1][1] / (h[1] * h[1]);
                let cy = b[1] / (2.0 * h[1]);
                diag += 2.0 * ay;
                if j > 0 {
                    row.push((idx - mx, -ay - cy));
                }
                if j + 1 < my {
                    row.push((idx + mx, -ay + cy));
                }
                let a12 = 0.5 * (a[0][1] + a[1][0]);
                if a12 != 0.0 {
                    let k = a12 / (2.0 * h[0] * h[1]);
                    for (di, dj, sign) in [(1i64, 1i64, -1.0), (-1, -1, -1.0), (1, -1, 1.0), (-1, 1, 1.0)] {
                        let ii = i as i64 + di;
                        let jj = j as i64 + dj;
                        if ii >= 0 && jj >= 0 && (ii as usize) < mx && (jj as usize) < my {
                            row.push((space.index(ii as usize, jj as usize), sign * k));
                        }
                    }
                }
            }
            row.push((idx, diag));
            row
        })
        .collect();
    CsrMatrix::from_rows(rows)
}

/// `B = I/Δt + A_h(t) + diag(f_y(x, t, y))`.
pub fn step_matrix(spec: &ProblemSpec, grids: &Grids, k: usize, y: &[f64]) -> CsrMatrix {
    let t = grids.time.time(k);
    let dim = grids.space.dim();
    let inv_dt = 1.0 / grids.time.dt();
    let d: Vec<f64> = y
        .iter()
        .enumerate()
        .map(|(i, &yi)| {
            let p = grids.space.coords(i);
            inv_dt + spec.nonlinearity.dy(&p[..dim], t, yi)
        })
        .collect();
    elliptic_operator(spec, &grids.space, t).plus_diagonal(&d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForwardOptions {
    /// Absolute tolerance on the max-norm of the step residual.
    pub newton_tol: f64,
    pub max_newton_iterations: usize,
    pub max_halvings: usize,
    pub linear_solver: LinearSolver,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        ForwardOptions {
            newton_tol: 1e-10,
            max_newton_iterations: 50,
            max_halvings: 30,
            linear_solver: LinearSolver::Direct,
        }
    }
}

/// A discrete state together with Newton diagnostics.
#[derive(Debug, Clone)]
pub struct State {
    pub y: GridFunction,
    /// Newton iterations used at each step `1..=N_t`.
    pub newton_iterations: Vec<usize>,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

struct StepResidual<'a> {
    spec: &'a ProblemSpec,
    grids: &'a Grids,
    a: CsrMatrix,
    t: f64,
    prev: &'a [f64],
    source: &'a [f64],
}

impl StepResidual<'_> {
    fn eval(&self, y: &[f64], out: &mut [f64]) {
        let dim = self.grids.space.dim();
        let inv_dt = 1.0 / self.grids.time.dt();
        self.a.matvec(y, out);
        for i in 0..y.len() {
            let p = self.grids.space.coords(i);
            out[i] += (y[i] - self.prev[i]) * inv_dt + self.spec.nonlinearity.value(&p[..dim], self.t, y[i])
                - self.source[i];
        }
    }
}

/// Rejects step sizes for which `1/Δt + C_f ≤ 0`.
pub fn check_step_size(spec: &ProblemSpec, grids: &Grids) -> Result<()> {
    let margin = 1.0 / grids.time.dt() + spec.monotonicity_floor;
    if margin > 0.0 {
        Ok(())
    } else {
        Err(Error::LinearSolveFailure(format!(
            "time step {} too large for df/dy >= {}: 1/dt + C_f = {margin}",
            grids.time.dt(),
            spec.monotonicity_floor
        )))
    }
}

/// Solves the discrete state equation for control `u`. Level 0 of `u` is
/// not used.
pub fn solve_state(spec: &ProblemSpec, grids: &Grids, u: &GridFunction, opts: &ForwardOptions) -> Result<State> {
    spec.check_grids(grids)?;
    grids.check(u)?;
    check_step_size(spec, grids)?;
    let n = grids.space.interior_len();
    let mut y = GridFunction::zeros(grids);
    y.level_mut(0).copy_from_slice(&spec.initial_state_on(&grids.space).values);
    let mut iterations = Vec::with_capacity(grids.time.steps());
    let mut r = vec![0.0; n];
    let mut r_trial = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let eps = f64::EPSILON;
    for k in 1..grids.levels() {
        let t = grids.time.time(k);
        let prev = y.level(k - 1).to_vec();
        let res = StepResidual {
            spec,
            grids,
            a: elliptic_operator(spec, &grids.space, t),
            t,
            prev: &prev,
            source: u.level(k),
        };
        let mut cur = prev.clone();
        res.eval(&cur, &mut r);
        let mut rnorm = max_abs(&r);
        let mut it = 0;
        loop {
            if rnorm <= opts.newton_tol {
                break;
            }
            if it == opts.max_newton_iterations {
                return Err(Error::NewtonDiverged { step: k, residual: rnorm });
            }
            it += 1;
            let jac = step_matrix(spec, grids, k, &cur);
            let neg: Vec<f64> = r.iter().map(|v| -v).collect();
            let delta = StepSolver::new(&jac, opts.linear_solver)?.solve(&neg)?;
            let dnorm = max_abs(&delta);
            let mut s = 1.0;
            let mut accepted = false;
            for _ in 0..=opts.max_halvings {
                for i in 0..n {
                    trial[i] = cur[i] + s * delta[i];
                }
                res.eval(&trial, &mut r_trial);
                let tn = max_abs(&r_trial);
                if tn.is_finite() && tn < rnorm {
                    accepted = true;
                    rnorm = tn;
                    std::mem::swap(&mut cur, &mut trial);
                    std::mem::swap(&mut r, &mut r_trial);
                    break;
                }
                s *= 0.5;
            }
            if !accepted {
                // the residual is at round-off level and cannot decrease further
                if dnorm <= 8.0 * eps * (1.0 + max_abs(&cur)) {
                    break;
                }
                return Err(Error::NewtonDiverged { step: k, residual: rnorm });
            }
            if s == 1.0 && dnorm <= 8.0 * eps * (1.0 + max_abs(&cur)) {
                break;
            }
        }
        iterations.push(it);
        y.level_mut(k).copy_from_slice(&cur);
    }
    Ok(State {
        y,
        newton_iterations: iterations,
    })
}

/// Max-norm of the discrete state-equation residual over steps `1..=N_t`,
/// including the initial condition mismatch at level 0.
pub fn state_residual(spec: &ProblemSpec, grids: &Grids, u: &GridFunction, y: &GridFunction) -> Result<f64> {
    grids.check(u)?;
    grids.check(y)?;
    let y0 = spec.initial_state_on(&grids.space);
    let mut worst = y0
        .values
        .iter()
        .zip(y.level(0))
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let mut r = vec![0.0; grids.space.interior_len()];
    for k in 1..grids.levels() {
        let t = grids.time.time(k);
        let res = StepResidual {
            spec,
            grids,
            a: elliptic_operator(spec, &grids.space, t),
            t,
            prev: y.level(k - 1),
            source: u.level(k),
        };
        res.eval(y.level(k), &mut r);
        worst = worst.max(max_abs(&r));
    }
    Ok(worst)
}

/// `(max_k ‖y_k‖²_{L²} + Σ_k Δt ⟨A_h y_k, y_k⟩)^{1/2}`, the discrete
/// counterpart of the `L^∞(L²) ∩ L²(H¹_0)` energy. Its constants are not
/// reproduced; use it to watch boundedness under refinement.
pub fn state_energy(spec: &ProblemSpec, grids: &Grids, y: &GridFunction) -> Result<f64> {
    grids.check(y)?;
    let c = grids.space.cell_volume();
    let dt = grids.time.dt();
    let mut ay = vec![0.0; grids.space.interior_len()];
    let mut sup = 0.0f64;
    let mut dissipation = 0.0;
    for k in 0..grids.levels() {
        let yk = y.level(k);
        sup = sup.max(c * yk.iter().map(|v| v * v).sum::<f64>());
        if k > 0 {
            elliptic_operator(spec, &grids.space, grids.time.time(k)).matvec(yk, &mut ay);
            dissipation += dt * c * yk.iter().zip(&ay).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    Ok((sup + dissipation.max(0.0)).sqrt())
}

/// The step matrices `B_k` at a fixed state, prepared for repeated forward
/// and transposed solves. Index `k` runs over `1..=N_t`.
#[derive(Debug, Clone)]
pub struct Linearization {
    n_space: usize,
    levels: usize,
    dt: f64,
    solvers: Vec<StepSolver>,
    matrices: Vec<CsrMatrix>,
}

impl Linearization {
    pub fn new(spec: &ProblemSpec, grids: &Grids, y: &GridFunction, solver: LinearSolver) -> Result<Self> {
        grids.check(y)?;
        check_step_size(spec, grids)?;
        let built: Result<Vec<(CsrMatrix, StepSolver)>> = (1..grids.levels())
            .into_par_iter()
            .map(|k| {
                let m = step_matrix(spec, grids, k, y.level(k));
                let s = StepSolver::new(&m, solver)?;
                Ok((m, s))
            })
            .collect();
        let (matrices, solvers) = built?.into_iter().unzip();
        Ok(Linearization {
            n_space: grids.space.interior_len(),
            levels: grids.levels(),
            dt: grids.time.dt(),
            solvers,
            matrices,
        })
    }

    pub fn step_matrix(&self, k: usize) -> &CsrMatrix {
        &self.matrices[k - 1]
    }

    fn zeros(&self) -> GridFunction {
        GridFunction::from_raw(self.n_space, self.levels, vec![0.0; self.n_space * self.levels])
    }

    /// Solves `B_k z^k = z^{k-1}/Δt + r^k`, `z^0 = 0`.
    pub fn forward(&self, r: &GridFunction) -> Result<GridFunction> {
        self.check(r)?;
        let mut z = self.zeros();
        let inv_dt = 1.0 / self.dt;
        for k in 1..self.levels {
            let rhs: Vec<f64> = z
                .level(k - 1)
                .iter()
                .zip(r.level(k))
                .map(|(a, b)| a * inv_dt + b)
                .collect();
            let x = self.solvers[k - 1].solve(&rhs)?;
            z.level_mut(k).copy_from_slice(&x);
        }
        Ok(z)
    }

    /// Solves `B_kᵀ p^k = s^k + p^{k+1}/Δt` for `k = N_t, …, 1` with
    /// `p^{N_t+1} = terminal`; level 0 of the result is zero.
    pub fn backward(&self, s: &GridFunction, terminal: &SpatialField) -> Result<GridFunction> {
        self.check(s)?;
        if terminal.len() != self.n_space {
            return Err(Error::DimensionMismatch(format!(
                "terminal datum has {} values, expected {}",
                terminal.len(),
                self.n_space
            )));
        }
        let mut p = self.zeros();
        let inv_dt = 1.0 / self.dt;
        let mut next = terminal.values.clone();
        for k in (1..self.levels).rev() {
            let rhs: Vec<f64> = s.level(k).iter().zip(&next).map(|(a, b)| a + b * inv_dt).collect();
            next = self.solvers[k - 1].solve_transpose(&rhs)?;
            p.level_mut(k).copy_from_slice(&next);
        }
        Ok(p)
    }

    fn check(&self, f: &GridFunction) -> Result<()> {
        if f.n_space() != self.n_space || f.n_levels() != self.levels {
            return Err(Error::DimensionMismatch(format!(
                "field is {}x{} but linearization is {}x{}",
                f.n_space(),
                f.n_levels(),
                self.n_space,
                self.levels
            )));
        }
        Ok(())
    }
}
