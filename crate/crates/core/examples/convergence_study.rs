//! Observed orders of the implicit Euler / finite difference scheme against a
//! manufactured solution `y = e^{-t} sin(πx)`, refining in space with the
//! temporal error removed and in time with the spatial error removed.
//!
//! cargo run --example convergence_study

use parabolic_ocp::convergence::{convergence_study, ConvergenceTable, Isolate};
use parabolic_ocp::forward::ForwardOptions;
use parabolic_ocp::presets;

fn show(title: &str, t: &ConvergenceTable) {
    println!("{title}");
    println!("{:>6} {:>6} {:>12} {:>8} {:>8}", "nodes", "steps", "max error", "order h", "order dt");
    for l in &t.levels {
        let o = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
        println!("{:>6} {:>6} {:>12.4e} {:>8} {:>8}", l.nodes[0], l.steps, l.max_error, o(l.order_h), o(l.order_dt));
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (spec, u, y) = presets::manufactured();
    let fwd = ForwardOptions::default();
    let space = [(vec![9], 16), (vec![17], 16), (vec![33], 16), (vec![65], 16)];
    show("space", &convergence_study(&spec, &space, &u, &y, Isolate::Space, &fwd)?);
    let time = [(vec![17], 8), (vec![17], 16), (vec![17], 32), (vec![17], 64)];
    show("time", &convergence_study(&spec, &time, &u, &y, Isolate::Time, &fwd)?);
    let both = [(vec![5], 4), (vec![9], 16), (vec![17], 64)];
    show("dt ~ h^2, no isolation", &convergence_study(&spec, &both, &u, &y, Isolate::None, &fwd)?);
    Ok(())
}
