//! Acceptance criteria at desk scale. Prints one line per criterion and exits
//! non-zero if any fails.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use parabolic_ocp::adjoint::{solve_adjoint, transposition_residual, MeasurePair, SignMode};
use parabolic_ocp::calculus::{gradient_check, hessian_continuity_probe, GradCheckOptions};
use parabolic_ocp::cli;
use parabolic_ocp::conditions::{check_kkt, quadratic_growth_probe, CriticalCone, KktTolerances};
use parabolic_ocp::convergence::{convergence_study, Isolate};
use parabolic_ocp::forward::{solve_state, ForwardOptions, Linearization};
use parabolic_ocp::grid::{GridFunction, Grids, SpatialField};
use parabolic_ocp::linalg::LinearSolver;
use parabolic_ocp::optimizer::{solve_ocp, KktTriplet, SolveOpts};
use parabolic_ocp::presets;
use parabolic_ocp::problem::{ProblemSpec, RunningCost, SpaceTimeField, StateConstraint};
use parabolic_ocp::random::{rng, smooth_unit_field};
use parabolic_ocp::sensitivity::taylor_remainders;

use common::{stack, DenseScheme};

type Outcome = Result<(bool, String), Box<dyn std::error::Error>>;
type Criterion = (&'static str, fn() -> Outcome);

const ACTIVE_TOL: f64 = 1e-6;

fn testbed_opts() -> SolveOpts {
    SolveOpts {
        lambda0: 10.0,
        ..Default::default()
    }
}

fn solve(spec: &ProblemSpec, nodes: usize, steps: usize, opts: &SolveOpts) -> Result<(Grids, KktTriplet), parabolic_ocp::Error> {
    let grids = spec.grids(&vec![nodes; spec.dim()], steps)?;
    let t = solve_ocp(spec, &grids, opts)?;
    Ok((grids, t))
}

/// Nonnegative masses on part of the cylinder and on the terminal slice.
fn some_measure(grids: &Grids) -> MeasurePair {
    let w = grids.weight(1);
    let c = grids.space.cell_volume();
    let mut q = GridFunction::from_fn(grids, |x, t| w * ((std::f64::consts::PI * x[0]).sin() - 0.5).max(0.0) * t);
    q.level_mut(0).fill(0.0);
    let m = SpatialField::from_fn(&grids.space, |x| c * x[0] * (1.0 - x[0]));
    MeasurePair::new(grids, q, m, SignMode::Nonnegative).unwrap()
}

fn adjoint_duality() -> Outcome {
    let mut worst = 0.0f64;
    for (dim, nodes, steps) in [(1, 33, 32), (2, 17, 16)] {
        for f in presets::nonlinearities(dim) {
            let spec = ProblemSpec::unit(dim)
                .with_nonlinearity(f)
                .with_running_cost(RunningCost::tracking(SpaceTimeField::new("x t", |x, t| x[0] * t)))
                .with_nu(0.1)
                .with_bounds(-5.0, 5.0)
                .with_state_constraint(StateConstraint::Upper { gamma: 1.0 });
            let grids = spec.grids(&vec![nodes; dim], steps)?;
            let u = GridFunction::from_fn(&grids, |x, t| 2.0 * (3.0 * x[0]).sin() * (1.0 + t));
            let y = solve_state(&spec, &grids, &u, &ForwardOptions::default())?.y;
            let lin = Linearization::new(&spec, &grids, &y, LinearSolver::Direct)?;
            let m = some_measure(&grids);
            let phi = solve_adjoint(&spec, &grids, &y, &lin, &m)?;
            worst = worst.max(transposition_residual(&spec, &grids, &y, &lin, &phi, &m, 20, 1)?);
        }
    }
    Ok((worst <= 1e-10, format!("max transposition residual {worst:.2e} (≤ 1e-10), 8 cases")))
}

fn gradient_correctness() -> Outcome {
    let spec = presets::cubic(1);
    let grids = spec.grids(&[33], 32)?;
    let u = GridFunction::from_fn(&grids, |x, t| 3.0 * x[0] * (1.0 - t));
    let opts = GradCheckOptions::default();
    let fwd = ForwardOptions::default();
    let j = gradient_check(&spec, &grids, &u, None, 5, &opts, &fwd)?;
    let m = some_measure(&grids);
    let l = gradient_check(&spec, &grids, &u, Some(&m), 5, &opts, &fwd)?;
    Ok((
        j.max_relative_error <= 1e-5 && l.max_relative_error <= 1e-5 && j.rows.len() == 10,
        format!(
            "max relative error J {:.2e}, Lagrangian {:.2e} (≤ 1e-5, s = 1e-4, 10 directions)",
            j.max_relative_error, l.max_relative_error
        ),
    ))
}

fn taylor_orders() -> Outcome {
    let spec = presets::cubic(1);
    let grids = spec.grids(&[33], 32)?;
    let u = GridFunction::from_fn(&grids, |x, t| 3.0 * x[0] * (1.0 - t));
    let v = smooth_unit_field(&grids, &mut rng(2)).scaled(4.0);
    let fwd = ForwardOptions {
        newton_tol: 1e-14,
        ..Default::default()
    };
    let r = taylor_remainders(&spec, &grids, &u, &v, &[1e-1, 1e-2, 1e-3], &fwd)?;
    Ok((
        r.first_order >= 1.9 && r.second_order >= 2.9,
        format!("slopes {:.3} (≥ 1.9) and {:.3} (≥ 2.9)", r.first_order, r.second_order),
    ))
}

fn mms_convergence() -> Outcome {
    let (spec, u, y) = presets::manufactured();
    let fwd = ForwardOptions::default();
    let space = convergence_study(&spec, &[(vec![9], 16), (vec![17], 16), (vec![33], 16)], &u, &y, Isolate::Space, &fwd)?;
    let time = convergence_study(&spec, &[(vec![17], 8), (vec![17], 16), (vec![17], 32)], &u, &y, Isolate::Time, &fwd)?;
    let (oh, ot) = (space.min_order_h().unwrap_or(0.0), time.min_order_dt().unwrap_or(0.0));
    Ok((oh >= 1.9 && ot >= 0.9, format!("spatial order {oh:.3} (≥ 1.9), temporal order {ot:.3} (≥ 0.9)")))
}

fn kkt_end_to_end() -> Outcome {
    let fwd = ForwardOptions::default();
    let tol = KktTolerances {
        support: 1e-6,
        ..Default::default()
    };
    let spec = presets::state_active(1);
    let (grids, t) = solve(&spec, 33, 32, &testbed_opts())?;
    let r = check_kkt(&spec, &grids, &t, &tol, &fwd)?;
    let one_sided = r.pass
        && r.stationarity <= 1e-8
        && r.feasibility <= 1e-6
        && r.support_violation <= 1e-6 * r.total_variation
        && r.sign_violation == 0.0
        && r.total_variation > 0.0;
    let bspec = presets::bilateral(1);
    let (bgrids, bt) = solve(&bspec, 33, 32, &testbed_opts())?;
    let b = check_kkt(&bspec, &bgrids, &bt, &tol, &fwd)?;
    let sep = b.jordan_separation.unwrap_or(f64::NEG_INFINITY);
    let two_sided = b.pass && sep > 2.0 * ACTIVE_TOL;
    Ok((
        one_sided && two_sided,
        format!(
            "stationarity {:.2e}, feasibility {:.2e}, support {:.2e} of TV {:.3e}, sign {:.1e}; two-sided: pass {}, Jordan separation {sep:.3e}",
            r.stationarity, r.feasibility, r.support_violation, r.total_variation, r.sign_violation, b.pass
        ),
    ))
}

fn ssc_convex_floor() -> Outcome {
    let fwd = ForwardOptions::default();
    let mut lines = Vec::new();
    let mut ok = true;
    for name in ["state_active", "bilateral", "lq_interior"] {
        let spec = presets::by_name(name, 1)?;
        let (grids, t) = solve(&spec, 33, 32, &testbed_opts())?;
        let r = CriticalCone::new(&spec, &grids, &t, ACTIVE_TOL, &fwd)?.check_ssc(0.0, 200, 11)?;
        ok &= r.n_samples >= 200 && r.min_ratio >= spec.nu - 1e-8;
        lines.push(format!("{name} {:.10} over {}", r.min_ratio, r.n_samples));
    }
    Ok((ok, format!("min ratio ≥ ν − 1e-8 (ν = 0.1): {}", lines.join(", "))))
}

fn nu_limit() -> Outcome {
    let fwd = ForwardOptions::default();
    let mut lines = Vec::new();
    let mut ok = true;
    for name in ["lq_interior", "state_active", "cubic"] {
        let spec = presets::by_name(name, 1)?;
        let (grids, t) = solve(&spec, 65, 128, &testbed_opts())?;
        let r = CriticalCone::new(&spec, &grids, &t, ACTIVE_TOL, &fwd)?.check_ssc(0.0, 8, 1)?;
        let rel = (r.nu_limit_diagnostic - spec.nu).abs() / spec.nu;
        ok &= rel <= 0.05;
        lines.push(format!("{name} {:.5} ({:.2}%)", r.nu_limit_diagnostic, 100.0 * rel));
    }
    Ok((ok, format!("checkerboard ratio at 65 nodes × 128 steps within 5% of ν = 0.1: {}", lines.join(", "))))
}

fn ssc_negative() -> Outcome {
    let fwd = ForwardOptions::default();
    let spec = presets::indefinite(1);
    let (grids, t) = solve(&spec, 7, 5, &SolveOpts::default())?;
    let cone = CriticalCone::new(&spec, &grids, &t, ACTIVE_TOL, &fwd)?;
    let (n, seed) = (200, 13);
    let report = cone.check_ssc(0.0, n, seed)?;
    // the sampled set, rebuilt: random members then the probes that pass
    let mut set: Vec<GridFunction> = cone.sample(0.0, n, seed)?.directions.into_iter().map(|d| d.v).collect();
    for (_, v) in cone.probes() {
        let v = cone.process(&v)?;
        let m = cone.membership(&v, 0.0)?;
        if m.member && m.lp_norm > 0.0 {
            set.push(v);
        }
    }
    let dense = DenseScheme::new(&spec, &grids);
    assert_eq!(dense.dofs(), 25);
    let z = dense.control_to_state();
    let curvature = match &spec.running_cost {
        RunningCost::Tracking { weight, .. } => *weight,
        _ => unreachable!(),
    };
    let brute = set
        .iter()
        .map(|v| {
            let v = stack(v);
            let zv = &z * &v;
            (curvature * zv.norm_squared() + spec.nu * v.norm_squared()) / v.norm_squared()
        })
        .fold(f64::INFINITY, f64::min);
    let diff = (brute - report.min_ratio).abs();
    Ok((
        report.min_ratio < 0.0 && diff <= 1e-8 && set.len() == report.n_samples,
        format!(
            "min ratio {:.10} (< 0), dense 25-dof brute force {:.10}, difference {diff:.1e} (≤ 1e-8) over {} directions",
            report.min_ratio,
            brute,
            set.len()
        ),
    ))
}

fn quadratic_growth() -> Outcome {
    let spec = presets::lq_interior(1);
    let (grids, t) = solve(&spec, 17, 16, &SolveOpts::default())?;
    let g = quadratic_growth_probe(&spec, &grids, &t, &[1e-2, 1e-3, 1e-4], 8, 3, &ForwardOptions::default())?;
    let ok = g
        .rows
        .iter()
        .all(|r| r.kappa.is_some_and(|k| (k - spec.nu).abs() <= 0.1 * spec.nu));
    let ks: Vec<String> = g.rows.iter().map(|r| format!("r={:e}: {:.5}", r.radius, r.kappa.unwrap_or(f64::NAN))).collect();
    Ok((ok, format!("κ within 10% of ν = 0.1: {}", ks.join(", "))))
}

fn hessian_continuity() -> Outcome {
    let spec = presets::cubic(1);
    let (grids, t) = solve(&spec, 33, 32, &testbed_opts())?;
    let h = hessian_continuity_probe(&spec, &grids, &t.u, &t.measure, &[1e-1, 1e-2, 1e-3], 10, 4, &ForwardOptions::default())?;
    let sups: Vec<String> = h.rows.iter().map(|r| format!("ρ={:e}: {:.3e}", r.rho, r.sup)).collect();
    Ok((h.monotone, format!("sup values non-increasing within 10%: {}", sups.join(", "))))
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        out.insert(p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap());
    }
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir()?;
    let out = tmp.path().join("out");
    let config = tmp.path().join("run.json");
    let text = format!(
        r#"{{
  "problem": {{ "preset": "state_active" }},
  "grid": {{ "nodes": [17], "steps": 16 }},
  "solver": {{ "lambda0": 10.0 }},
  "conditions": {{ "tau": [0.0, 0.01], "n_samples": 100, "growth_radii": [1e-3], "growth_samples": 4 }},
  "gradcheck": {{ "control": "x * (1 - t)", "measure": {{ "interior": "t" }} }},
  "convergence": {{ "levels": [{{ "nodes": 9, "steps": 8 }}, {{ "nodes": 17, "steps": 8 }}], "isolate": "space" }},
  "output": {{ "directory": {:?} }},
  "seed": 21
}}"#,
        out.display().to_string()
    );
    fs::write(&config, text)?;
    let mut runs = Vec::new();
    let mut codes = Vec::new();
    for _ in 0..2 {
        for cmd in ["solve", "check-kkt", "check-ssc", "gradcheck", "convergence"] {
            let args = ["parabolic-ocp", cmd, "--config", config.to_str().unwrap(), "--quiet"];
            codes.push(cli::run(args));
        }
        runs.push(snapshot(&out));
    }
    let files = runs[0].len();
    Ok((
        runs[0] == runs[1] && codes.iter().all(|&c| c == 0) && files >= 11,
        format!("{files} output files byte-identical across two runs, exit codes {codes:?}"),
    ))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("adjoint duality", adjoint_duality),
        ("gradient correctness", gradient_correctness),
        ("Taylor orders", taylor_orders),
        ("manufactured-solution convergence", mms_convergence),
        ("first-order conditions end to end", kkt_end_to_end),
        ("second-order floor on convex instances", ssc_convex_floor),
        ("high-frequency limit of the quadratic form", nu_limit),
        ("indefinite instance detected", ssc_negative),
        ("quadratic growth", quadratic_growth),
        ("Hessian continuity trend", hessian_continuity),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (pass, detail) = match f() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        let secs = start.elapsed().as_secs_f64();
        let pass = pass && secs <= 60.0;
        if !pass {
            failed += 1;
        }
        println!(
            "acceptance {:>2} {:<44} {} ({secs:.1} s) {detail}",
            i + 1,
            name,
            if pass { "PASS" } else { "FAIL" }
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
