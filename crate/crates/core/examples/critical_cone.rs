//! Samples the critical cone at a solution and reports the smallest
//! curvature ratio `Q(v)/‖v‖²`, for a convex instance and for one whose
//! second-order condition fails.
//!
//! cargo run --example critical_cone

use parabolic_ocp::conditions::CriticalCone;
use parabolic_ocp::forward::ForwardOptions;
use parabolic_ocp::optimizer::{solve_ocp, SolveOpts};
use parabolic_ocp::presets;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fwd = ForwardOptions::default();
    for (name, nodes, steps) in [("state_active", 33, 32), ("indefinite", 7, 5)] {
        let spec = presets::by_name(name, 1)?;
        let grids = spec.grids(&[nodes], steps)?;
        let t = solve_ocp(&spec, &grids, &SolveOpts { lambda0: 10.0, ..Default::default() })?;
        let cone = CriticalCone::new(&spec, &grids, &t, 1e-6, &fwd)?;
        println!("{name} ({nodes} nodes, {steps} steps, nu = {})", spec.nu);
        for tau in [0.0, 1e-2] {
            let r = cone.check_ssc(tau, 200, 7)?;
            println!(
                "  tau {tau:<5} accepted {:>3} of {:>4} attempts, min ratio {:>11.6}, checkerboard ratio {:.6}, positive {}",
                r.n_samples, r.attempts, r.min_ratio, r.nu_limit_diagnostic, r.positive
            );
        }
        let worst = cone.check_ssc(0.0, 200, 7)?;
        if let Some(s) = worst.samples.iter().min_by(|a, b| a.ratio.total_cmp(&b.ratio)) {
            println!("  worst direction: {:?}, ratio {:.6}", s.kind, s.ratio);
        }
    }
    Ok(())
}
