//! Builds a problem from a JSON run configuration (convection, exponential
//! nonlinearity, two-sided state bounds) and solves it. Any of the files in
//! `examples/configs` can be passed instead.
//!
//! cargo run --example from_config [-- CONFIG]

use std::path::PathBuf;

use parabolic_ocp::cli::RunConfig;
use parabolic_ocp::conditions::check_kkt;
use parabolic_ocp::forward::ForwardOptions;
use parabolic_ocp::optimizer::solve_ocp;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/configs/custom_problem.json"));
    let mut cfg = RunConfig::load(&path)?;
    cfg.resolve(None, None);
    let spec = cfg.problem.build()?;
    let grids = cfg.grid.build(&spec)?;
    println!("{}: dimension {}, {} unknowns per level, {} steps", path.display(), spec.dim(), grids.space.interior_len(), grids.time.steps());

    let t = solve_ocp(&spec, &grids, &cfg.solver)?;
    let last = t.history.last().expect("at least one stage");
    println!("{} stages, final lambda {:.1e}, objective {:.6}", t.history.len(), last.lambda, last.objective);

    let r = check_kkt(&spec, &grids, &t, &cfg.conditions.tolerances, &ForwardOptions::default())?;
    println!(
        "stationarity {:.2e}, feasibility {:.2e}, multiplier mass {:.4}, pass {}",
        r.stationarity, r.feasibility, r.total_variation, r.pass
    );
    Ok(())
}
