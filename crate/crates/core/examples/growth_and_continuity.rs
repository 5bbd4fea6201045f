//! Local behaviour around a solution: the empirical quadratic growth constant
//! of `J` over admissible controls at several radii, and how fast the second
//! derivative changes as the state moves away from the optimum.
//!
//! cargo run --example growth_and_continuity

use parabolic_ocp::calculus::hessian_continuity_probe;
use parabolic_ocp::conditions::quadratic_growth_probe;
use parabolic_ocp::forward::ForwardOptions;
use parabolic_ocp::optimizer::{solve_ocp, SolveOpts};
use parabolic_ocp::presets;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fwd = ForwardOptions::default();

    let spec = presets::lq_interior(1);
    let grids = spec.grids(&[17], 16)?;
    let t = solve_ocp(&spec, &grids, &SolveOpts::default())?;
    let g = quadratic_growth_probe(&spec, &grids, &t, &[1e-1, 1e-2, 1e-3, 1e-4], 8, 3, &fwd)?;
    println!("quadratic growth, nu = {}", spec.nu);
    for r in &g.rows {
        let k = r.kappa.map_or("-".to_string(), |k| format!("{k:.6}"));
        println!("  radius {:<6e} feasible {}/{} kappa {k}", r.radius, r.feasible, r.attempts);
    }

    let spec = presets::cubic(1);
    let grids = spec.grids(&[33], 32)?;
    let t = solve_ocp(&spec, &grids, &SolveOpts { lambda0: 10.0, ..Default::default() })?;
    let h = hessian_continuity_probe(&spec, &grids, &t.u, &t.measure, &[1e-1, 1e-2, 1e-3], 10, 4, &fwd)?;
    println!("second derivative change, cubic nonlinearity");
    for r in &h.rows {
        println!("  rho {:<6e} reached {:.3e} sup {:.3e}", r.rho, r.achieved, r.sup);
    }
    println!("  non-increasing: {}", h.monotone);
    Ok(())
}
