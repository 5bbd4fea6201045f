//! Adjoint gradients of the cost and of the Lagrangian against central
//! differences, then the Taylor remainder slopes of the state map.
//!
//! cargo run --example gradient_check

use parabolic_ocp::adjoint::{MeasurePair, SignMode};
use parabolic_ocp::calculus::{gradient_check, GradCheckOptions};
use parabolic_ocp::forward::ForwardOptions;
use parabolic_ocp::grid::{GridFunction, SpatialField};
use parabolic_ocp::presets;
use parabolic_ocp::random::{rng, smooth_unit_field};
use parabolic_ocp::sensitivity::taylor_remainders;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = presets::cubic(1);
    let grids = spec.grids(&[33], 32)?;
    let u = GridFunction::from_fn(&grids, |x, t| 3.0 * x[0] * (1.0 - t));
    let fwd = ForwardOptions::default();

    let w = grids.weight(1);
    let mut q = GridFunction::from_fn(&grids, |x, t| w * x[0] * t);
    q.level_mut(0).fill(0.0);
    let m = MeasurePair::new(&grids, q, SpatialField::zeros(&grids.space), SignMode::Nonnegative)?;

    for (label, measure) in [("J", None), ("Lagrangian", Some(&m))] {
        let r = gradient_check(&spec, &grids, &u, measure, 1, &GradCheckOptions::default(), &fwd)?;
        println!("{label}: max relative error {:.2e}, pass {}", r.max_relative_error, r.pass);
        for row in r.rows.iter().take(3) {
            println!("  direction {} adjoint {:+.10e} difference {:+.10e}", row.direction, row.adjoint, row.finite_difference);
        }
    }

    let v = smooth_unit_field(&grids, &mut rng(2)).scaled(4.0);
    let tight = ForwardOptions {
        newton_tol: 1e-14,
        ..Default::default()
    };
    let t = taylor_remainders(&spec, &grids, &u, &v, &[1e-1, 1e-2, 1e-3], &tight)?;
    println!("{:>8} {:>12} {:>12}", "step", "first", "second");
    for row in &t.rows {
        println!("{:>8.0e} {:>12.3e} {:>12.3e}", row.step, row.first, row.second);
    }
    println!("slopes {:.3} and {:.3}", t.first_order, t.second_order);
    Ok(())
}
