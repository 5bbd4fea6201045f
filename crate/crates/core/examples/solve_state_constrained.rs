//! Solves the one-sided state-constrained instance along the penalty path and
//! writes the optimal triplet as field files. Ends with the adjoint sup norm
//! and the state energy on refined grids.
//!
//! cargo run --example solve_state_constrained [-- OUT_DIR]

use parabolic_ocp::cli::write_triplet;
use parabolic_ocp::forward::state_energy;
use parabolic_ocp::optimizer::{feasibility, solve_ocp, stationarity, SolveOpts};
use parabolic_ocp::presets;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = presets::state_active(1);
    let grids = spec.grids(&[33], 32)?;
    let opts = SolveOpts {
        lambda0: 10.0,
        ..Default::default()
    };
    let t = solve_ocp(&spec, &grids, &opts)?;

    println!("{:>5} {:>10} {:>6} {:>7} {:>12} {:>12} {:>12}", "stage", "lambda", "inner", "newton", "stationarity", "feasibility", "objective");
    for s in &t.history {
        println!(
            "{:>5} {:>10.1e} {:>6} {:>7} {:>12.3e} {:>12.3e} {:>12.6}",
            s.stage, s.lambda, s.inner_iterations, s.newton_steps, s.stationarity, s.feasibility, s.objective
        );
    }
    println!("final stationarity {:.3e}", stationarity(&spec, &t.u, &t.phi));
    println!("final feasibility  {:.3e}", feasibility(&spec, &t.y));
    println!("multiplier mass    {:.6}", t.measure.total_variation());

    if let Some(dir) = std::env::args().nth(1) {
        let dir = std::path::PathBuf::from(dir);
        std::fs::create_dir_all(&dir)?;
        write_triplet(&dir, &grids, &t)?;
        println!("wrote u, y, phi, mu_q, mu_terminal to {}", dir.display());
    }

    println!("{:>6} {:>6} {:>12} {:>12}", "nodes", "steps", "sup |phi|", "energy");
    for (nodes, steps) in [(17, 16), (33, 32), (65, 64)] {
        let grids = spec.grids(&[nodes], steps)?;
        let t = solve_ocp(&spec, &grids, &opts)?;
        println!("{nodes:>6} {steps:>6} {:>12.5} {:>12.5}", t.phi.max_abs(), state_energy(&spec, &grids, &t.y)?);
    }
    Ok(())
}
