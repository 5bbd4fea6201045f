//! First-order conditions at the solution of the two-sided instance: state and
//! adjoint residuals, stationarity, support and sign of the multiplier, and
//! the separation of its positive and negative parts.
//!
//! cargo run --example kkt_check

use parabolic_ocp::conditions::{check_kkt, KktTolerances};
use parabolic_ocp::forward::ForwardOptions;
use parabolic_ocp::optimizer::{solve_ocp, SolveOpts};
use parabolic_ocp::presets;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = presets::bilateral(1);
    let grids = spec.grids(&[33], 32)?;
    let t = solve_ocp(&spec, &grids, &SolveOpts { lambda0: 10.0, ..Default::default() })?;
    let tol = KktTolerances {
        support: 1e-6,
        ..Default::default()
    };
    let r = check_kkt(&spec, &grids, &t, &tol, &ForwardOptions::default())?;

    println!("state residual     {:.3e}", r.state_residual);
    println!("adjoint residual   {:.3e}", r.adjoint_residual);
    println!("stationarity       {:.3e}", r.stationarity);
    println!("feasibility        {:.3e}", r.feasibility);
    println!("support violation  {:.3e} of total variation {:.4}", r.support_violation, r.total_variation);
    println!("sign violation     {:.3e}", r.sign_violation);
    if let Some(sep) = r.jordan_separation {
        println!("upper/lower support separation {sep:.4}");
    }
    println!("flags {:?}", r.flags);
    println!("pass {}", r.pass);
    Ok(())
}
