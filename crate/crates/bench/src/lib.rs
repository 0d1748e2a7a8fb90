//! Shared fixtures for the criterion benchmarks.

use rsng::network::{Activation, ArchSpec, ParamVector};
use rsng::pde::{CollocationSet, PdeProblem};

pub struct Fixture {
    pub problem: PdeProblem,
    pub arch: ArchSpec,
    pub theta: ParamVector,
    pub points: CollocationSet,
}

/// Burgers with a seeded (unfitted) network of the given depth.
pub fn burgers(width: usize, hidden_layers: usize, n: usize) -> Fixture {
    let problem = PdeProblem::burgers();
    let arch = ArchSpec::new(problem.periods(), width, hidden_layers, Activation::Rational32);
    let theta = ParamVector::init(&arch, 0);
    let points = problem.make_grid(&[n]).expect("valid grid");
    Fixture { problem, arch, theta, points }
}
