//! Shared fixtures for the solver benchmarks.

use pbvp::inference::{self, IeksOptions, InitStrategy, Posterior};
use pbvp::problems;
use pbvp::solver::uniform_mesh;
use pbvp::{BvProblem, IwpPrior};

/// Bratu's problem with a prior of order `nu` on `n` uniform nodes.
pub fn bratu_setup(nu: usize, n: usize) -> (BvProblem, IwpPrior, Vec<f64>) {
    let problem = problems::get("bratu").expect("registered").problem;
    let prior = IwpPrior::new(problem.dim, nu).expect("valid order");
    let mesh = uniform_mesh(problem.t0(), problem.tmax(), n);
    (problem, prior, mesh)
}

/// A converged posterior for the fixture.
pub fn bratu_posterior(nu: usize, n: usize) -> (BvProblem, Posterior) {
    let (problem, prior, mesh) = bratu_setup(nu, n);
    let post = inference::ieks_solve(&problem, &prior, &mesh, &InitStrategy::Bridge, &IeksOptions::default())
        .expect("bratu solves")
        .posterior;
    (problem, post)
}

#[cfg(test)]
mod tests {
    #[test]
    fn fixtures_build() {
        let (_, post) = super::bratu_posterior(3, 8);
        assert_eq!(post.mesh().len(), 8);
    }
}
