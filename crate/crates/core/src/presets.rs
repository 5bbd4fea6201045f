//! Named problem instances used by the command line, the examples and the
//! acceptance suite.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::problem::{Nonlinearity, ProblemSpec, RunningCost, SpaceTimeField, StateConstraint};

pub const NAMES: &[&str] = &[
    "state_active",
    "bilateral",
    "lq_interior",
    "indefinite",
    "cubic",
    "manufactured",
];

pub fn by_name(name: &str, dim: usize) -> Result<ProblemSpec> {
    let spec = match name {
        "state_active" => state_active(dim),
        "bilateral" => bilateral(dim),
        "lq_interior" => lq_interior(dim),
        "indefinite" => indefinite(dim),
        "cubic" => cubic(dim),
        "manufactured" if dim == 1 => manufactured().0,
        _ => {
            return Err(Error::InvalidOption(format!(
                "unknown preset `{name}` for dimension {dim}; known: {}",
                NAMES.join(", ")
            )))
        }
    };
    Ok(spec)
}

fn bump(dim: usize, x: &[f64]) -> f64 {
    (0..dim).map(|i| (PI * x[i]).sin()).product()
}

/// `f ≡ 0`, `L = ½(y − y_d)²` with `y_d = 4·sin(πx)·t`, `y ≤ 0.1`,
/// `u ∈ [−20, 20]`, `ν = 0.1`. The unconstrained optimal state exceeds `γ`
/// on an interior region at later times.
pub fn state_active(dim: usize) -> ProblemSpec {
    ProblemSpec::unit(dim)
        .with_running_cost(RunningCost::tracking(SpaceTimeField::new("4 sin(pi x) t", move |x, t| {
            4.0 * bump(dim, x) * t
        })))
        .with_nu(0.1)
        .with_bounds(-20.0, 20.0)
        .with_state_constraint(StateConstraint::Upper { gamma: 0.1 })
}

/// Two-sided bounds `−0.1 ≤ y ≤ 0.1` with a target `20·sin(2πx)·t` pushing
/// the state up on the left half and down on the right half.
pub fn bilateral(dim: usize) -> ProblemSpec {
    ProblemSpec::unit(dim)
        .with_running_cost(RunningCost::tracking(SpaceTimeField::new("20 sin(2 pi x) t", move |x, t| {
            20.0 * (2.0 * PI * x[0]).sin() * t * if dim == 2 { (PI * x[1]).sin() } else { 1.0 }
        })))
        .with_nu(0.1)
        .with_bounds(-20.0, 20.0)
        .with_state_constraint(StateConstraint::Bilateral {
            lower: -0.1,
            upper: 0.1,
        })
}

/// Linear-quadratic with all constraints inactive at the optimum:
/// `L = ½(y − sin(πx)·t)²`, `ν = 0.1`, `u ∈ [−20, 20]`, `y ≤ 10`.
pub fn lq_interior(dim: usize) -> ProblemSpec {
    ProblemSpec::unit(dim)
        .with_running_cost(RunningCost::tracking(SpaceTimeField::new("sin(pi x) t", move |x, t| {
            bump(dim, x) * t
        })))
        .with_nu(0.1)
        .with_bounds(-20.0, 20.0)
        .with_state_constraint(StateConstraint::Upper { gamma: 10.0 })
}

/// Concave cost `L = −25·y²` with `ν = 0.01`: `ū = 0` is stationary with
/// every constraint inactive and the second derivative is indefinite.
pub fn indefinite(dim: usize) -> ProblemSpec {
    ProblemSpec::unit(dim)
        .with_running_cost(RunningCost::Tracking {
            target: SpaceTimeField::zero(),
            weight: -50.0,
        })
        .with_nu(0.01)
        .with_bounds(-1.0, 1.0)
        .with_state_constraint(StateConstraint::Upper { gamma: 10.0 })
}

/// `f = y³`, tracking `sin(πx)·(1 + t)`, `ν = 0.1`, `u ∈ [−10, 10]`, `y ≤ 5`.
pub fn cubic(dim: usize) -> ProblemSpec {
    ProblemSpec::unit(dim)
        .with_nonlinearity(Nonlinearity::CubicOdd { coefficient: 1.0 })
        .with_running_cost(RunningCost::tracking(SpaceTimeField::new("sin(pi x) (1 + t)", move |x, t| {
            bump(dim, x) * (1.0 + t)
        })))
        .with_nu(0.1)
        .with_bounds(-10.0, 10.0)
        .with_state_constraint(StateConstraint::Upper { gamma: 5.0 })
}

/// `y_t − y_xx + y = u` on `(0, 1)` with exact solution `e^{−t} sin(πx)`
/// for `u = π² e^{−t} sin(πx)`. Returns `(spec, control, exact)`.
pub fn manufactured() -> (ProblemSpec, SpaceTimeField, SpaceTimeField) {
    let spec = ProblemSpec::unit(1)
        .with_nonlinearity(Nonlinearity::LinearRate { rate: 1.0 })
        .with_bounds(-20.0, 20.0)
        .with_state_constraint(StateConstraint::Upper { gamma: 2.0 })
        .with_initial_state(SpaceTimeField::new("sin(pi x)", |x, _| (PI * x[0]).sin()));
    let control = SpaceTimeField::new("pi^2 exp(-t) sin(pi x)", |x, t| PI * PI * (-t).exp() * (PI * x[0]).sin());
    let exact = SpaceTimeField::new("exp(-t) sin(pi x)", |x, t| (-t).exp() * (PI * x[0]).sin());
    (spec, control, exact)
}

/// The four nonlinearity presets with representative parameters.
pub fn nonlinearities(dim: usize) -> Vec<Nonlinearity> {
    vec![
        Nonlinearity::Zero,
        Nonlinearity::LinearRate { rate: 2.0 },
        Nonlinearity::CubicOdd { coefficient: 1.0 },
        Nonlinearity::ExpWeighted {
            weight: SpaceTimeField::new("1 + bump", move |x, t| 0.5 * (1.0 + bump(dim, x) * t)),
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_validates_in_one_and_two_dimensions() {
        for name in NAMES {
            for dim in [1, 2] {
                if *name == "manufactured" && dim == 2 {
                    assert!(by_name(name, dim).is_err());
                    continue;
                }
                let s = by_name(name, dim).unwrap();
                assert!(s.validate().is_empty(), "{name} {dim}: {:?}", s.validate());
            }
        }
        assert!(by_name("nope", 1).is_err());
    }
}
