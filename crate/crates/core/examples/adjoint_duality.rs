//! The discrete adjoint is the exact transpose of the linearized state map,
//! including the measure terms: `⟨L_y + μ_Q, z⟩ + ⟨μ_Ω, z(T)⟩ = ⟨φ, v⟩` for
//! every direction `v`.
//!
//! cargo run --example adjoint_duality

use parabolic_ocp::adjoint::{solve_adjoint, transposition_residual, MeasurePair, SignMode};
use parabolic_ocp::forward::{solve_state, ForwardOptions, Linearization};
use parabolic_ocp::grid::{GridFunction, SpatialField};
use parabolic_ocp::linalg::LinearSolver;
use parabolic_ocp::presets;
use parabolic_ocp::problem::{ProblemSpec, RunningCost, SpaceTimeField, StateConstraint};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for (dim, nodes, steps) in [(1, 33, 32), (2, 17, 16)] {
        for f in presets::nonlinearities(dim) {
            let spec = ProblemSpec::unit(dim)
                .with_nonlinearity(f.clone())
                .with_running_cost(RunningCost::tracking(SpaceTimeField::new("x t", |x, t| x[0] * t)))
                .with_state_constraint(StateConstraint::Upper { gamma: 1.0 });
            let grids = spec.grids(&vec![nodes; dim], steps)?;
            let u = GridFunction::from_fn(&grids, |x, t| 2.0 * (3.0 * x[0]).sin() * (1.0 + t));
            let y = solve_state(&spec, &grids, &u, &ForwardOptions::default())?.y;
            let lin = Linearization::new(&spec, &grids, &y, LinearSolver::Direct)?;

            let w = grids.weight(1);
            let mut q = GridFunction::from_fn(&grids, |x, t| w * x[0] * t);
            q.level_mut(0).fill(0.0);
            let terminal = SpatialField::from_fn(&grids.space, |x| grids.space.cell_volume() * x[0]);
            let m = MeasurePair::new(&grids, q, terminal, SignMode::Nonnegative)?;

            let phi = solve_adjoint(&spec, &grids, &y, &lin, &m)?;
            let res = transposition_residual(&spec, &grids, &y, &lin, &phi, &m, 20, 1)?;
            println!("{dim}D {nodes:>2} nodes {steps:>2} steps, {f:?}: residual {res:.2e}");
        }
    }
    Ok(())
}
