//! Shared fixtures for the benchmarks.

use sros_core::problem::{DomainSpec, ProblemSpec};
use sros_core::{NoiseKind, Problem};

/// The default reactive transport problem on an `n × n` mesh.
pub fn problem(n: usize, kind: NoiseKind) -> Problem {
    let mut spec = ProblemSpec {
        domain: DomainSpec {
            nx: n,
            ny: n,
            ..DomainSpec::default()
        },
        ..ProblemSpec::default()
    };
    spec.noise.kind = kind;
    Problem::assemble(&spec, 0).expect("default problem assembles")
}

/// A smooth non-trivial state on the free nodes.
pub fn state(problem: &Problem) -> Vec<f64> {
    problem
        .system
        .points
        .iter()
        .map(|[x, y]| 0.5 + 0.25 * (x * y).sin())
        .collect()
}
