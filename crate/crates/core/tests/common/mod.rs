//! Dense reference discretization for one-dimensional problems with constant
//! diffusion, no convection and `f(y) = r·y`, assembled independently of the
//! library's sparse operators.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use parabolic_ocp::grid::{GridFunction, Grids};
use parabolic_ocp::problem::{Nonlinearity, ProblemSpec};

pub struct DenseScheme {
    /// Interior nodes.
    pub n: usize,
    pub steps: usize,
    pub dt: f64,
    pub h: f64,
    /// Quadrature weight `h·Δt` of levels `1..=N_t`.
    pub w: f64,
    /// `(I/Δt + A_h + r I)^{-1}`.
    pub binv: DMatrix<f64>,
}

impl DenseScheme {
    pub fn new(spec: &ProblemSpec, grids: &Grids) -> Self {
        assert_eq!(spec.dim(), 1, "dense scheme is one-dimensional");
        assert!(spec.convection.is_none());
        let rate = match spec.nonlinearity {
            Nonlinearity::Zero => 0.0,
            Nonlinearity::LinearRate { rate } => rate,
            _ => panic!("dense scheme needs affine dynamics"),
        };
        let n = grids.space.interior_len();
        let h = grids.space.spacing()[0];
        let dt = grids.time.dt();
        let a = spec.diffusion[0][0] / (h * h);
        let b = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                1.0 / dt + 2.0 * a + rate
            } else if i.abs_diff(j) == 1 {
                -a
            } else {
                0.0
            }
        });
        DenseScheme {
            n,
            steps: grids.time.steps(),
            dt,
            h,
            w: h * dt,
            binv: b.try_inverse().expect("step matrix is invertible"),
        }
    }

    pub fn dofs(&self) -> usize {
        self.n * self.steps
    }

    /// Implicit Euler from `y0` with source `u` (levels `1..=N_t` stacked).
    pub fn evolve(&self, y0: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dofs());
        let mut prev = y0.clone();
        for k in 0..self.steps {
            let rhs = &prev / self.dt + u.rows(k * self.n, self.n);
            let next = &self.binv * rhs;
            out.rows_mut(k * self.n, self.n).copy_from(&next);
            prev = next;
        }
        out
    }

    /// Matrix of the linear control-to-state map on levels `1..=N_t`.
    pub fn control_to_state(&self) -> DMatrix<f64> {
        let m = self.dofs();
        let zero = DVector::zeros(self.n);
        let mut z = DMatrix::zeros(m, m);
        for j in 0..m {
            let mut e = DVector::zeros(m);
            e[j] = 1.0;
            z.set_column(j, &self.evolve(&zero, &e));
        }
        z
    }
}

/// Levels `1..=N_t` of `f` stacked into one vector.
pub fn stack(f: &GridFunction) -> DVector<f64> {
    let n = f.n_space();
    DVector::from_column_slice(&f.values()[n..])
}

/// Inverse of [`stack`] with level 0 set to `level0`.
pub fn unstack(grids: &Grids, v: &DVector<f64>, level0: &[f64]) -> GridFunction {
    let mut vals = level0.to_vec();
    vals.extend(v.iter());
    GridFunction::from_values(grids, vals).unwrap()
}
