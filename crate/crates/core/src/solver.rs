//! The adaptive outer loop: iterate the smoother to a fixed point, calibrate,
//! estimate the error between nodes and refine the mesh until the error is
//! below the tolerance everywhere.

use std::time::Instant;

use nalgebra::DVector;

use crate::calibration;
use crate::error::{Error, Result};
use crate::inference::{self, IeksOptions, InitStrategy, IterationRecord, Posterior};
use crate::information::BvProblem;
use crate::meshing::{self, ErrorEstimatorKind, IntervalErrors};
use crate::prior::IwpPrior;

/// The mesh the solver starts from.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialMesh {
    /// This many equidistant nodes, endpoints included.
    Uniform(usize),
    /// An explicit increasing grid spanning the domain.
    Explicit(Vec<f64>),
}

impl InitialMesh {
    pub fn build(&self, t0: f64, tmax: f64) -> Result<Vec<f64>> {
        match self {
            InitialMesh::Uniform(n) => {
                if *n < 2 {
                    return Err(Error::InvalidArgument(format!(
                        "initial mesh needs at least 2 nodes, got {n}"
                    )));
                }
                Ok(uniform_mesh(t0, tmax, *n))
            }
            InitialMesh::Explicit(grid) => {
                if grid.len() < 2 || grid[0] != t0 || *grid.last().unwrap() != tmax {
                    return Err(Error::InvalidArgument(format!(
                        "initial mesh must have at least 2 nodes and span [{t0}, {tmax}]"
                    )));
                }
                Ok(grid.clone())
            }
        }
    }
}

/// `n` equidistant nodes on `[t0, tmax]`, with both endpoints exact.
pub fn uniform_mesh(t0: f64, tmax: f64, n: usize) -> Vec<f64> {
    let h = (tmax - t0) / (n - 1) as f64;
    let mut mesh: Vec<f64> = (0..n).map(|i| t0 + i as f64 * h).collect();
    mesh[n - 1] = tmax;
    mesh
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub order: usize,
    pub tol: f64,
    pub estimator: ErrorEstimatorKind,
    pub init_strategy: InitStrategy,
    pub initial_mesh: InitialMesh,
    pub max_refinements: usize,
    pub max_ieks_iters: usize,
    pub rtol_fixpoint: f64,
    /// EM update of the initial distribution every this many passes within a
    /// round, in addition to the one update per round.
    pub em_every: Option<usize>,
    /// Replaces the refinement exponent `ν + 1/2`.
    pub rho_override: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            order: 4,
            tol: 1e-6,
            estimator: ErrorEstimatorKind::StdDev,
            init_strategy: InitStrategy::Bridge,
            initial_mesh: InitialMesh::Uniform(3),
            max_refinements: 20,
            max_ieks_iters: 10,
            rtol_fixpoint: 1e-10,
            em_every: None,
            rho_override: None,
        }
    }
}

impl SolverConfig {
    pub fn rho(&self) -> f64 {
        self.rho_override.unwrap_or(self.order as f64 + 0.5)
    }

    fn validate(&self, problem: &BvProblem) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tolerance must be positive, got {}",
                self.tol
            )));
        }
        if self.order < problem.order {
            return Err(Error::InvalidArgument(format!(
                "prior order {} is below the ODE order {}",
                self.order, problem.order
            )));
        }
        if self.max_ieks_iters == 0 {
            return Err(Error::InvalidArgument("max_ieks_iters must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxRefinementsReached,
    IeksFailed,
}

impl SolveStatus {
    pub fn name(&self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxRefinementsReached => "max_refinements_reached",
            SolveStatus::IeksFailed => "ieks_failed",
        }
    }
}

/// One round of the outer loop.
#[derive(Clone, Debug, PartialEq)]
pub struct RefinementRecord {
    pub round: usize,
    pub n_nodes: usize,
    pub sigma_sq: f64,
    pub ieks_iters: usize,
    pub ieks_converged: bool,
    pub max_error: f64,
    pub wall_time_s: f64,
    /// Per-pass history of the smoother on this mesh.
    pub history: Vec<IterationRecord>,
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub posterior: Posterior,
    pub diagnostics: Vec<RefinementRecord>,
    pub status: SolveStatus,
    /// Interval errors of the returned posterior.
    pub errors: IntervalErrors,
    /// Calibrated prior after the last round.
    pub prior: IwpPrior,
    /// Message of the failure that stopped the loop, if any.
    pub failure: Option<String>,
}

impl Solution {
    pub fn mesh(&self) -> &[f64] {
        self.posterior.mesh()
    }

    pub fn sigma_sq(&self) -> f64 {
        self.posterior.sigma_sq()
    }

    pub fn ieks_iters_total(&self) -> usize {
        self.diagnostics.iter().map(|r| r.ieks_iters).sum()
    }

    pub fn refinements(&self) -> usize {
        self.diagnostics.len().saturating_sub(1)
    }
}

fn is_finite_posterior(post: &Posterior) -> bool {
    post.nodes()
        .iter()
        .all(|g| g.mean().iter().all(|x| x.is_finite()) && g.cov_sqrt().iter().all(|x| x.is_finite()))
}

/// Solves `problem` adaptively.
///
/// Fails outright only on invalid input or when the very first round cannot
/// produce a posterior; later failures end the loop with
/// [`SolveStatus::IeksFailed`] and the last good posterior.
pub fn solve(problem: &BvProblem, config: &SolverConfig) -> Result<Solution> {
    config.validate(problem)?;
    let mut mesh = config.initial_mesh.build(problem.t0(), problem.tmax())?;
    let mut prior = IwpPrior::new(problem.dim, config.order)?;
    let mut init = config.init_strategy.clone();
    let options = IeksOptions {
        max_iters: config.max_ieks_iters,
        rtol_fixpoint: config.rtol_fixpoint,
        em_every: config.em_every,
        calibrate: true,
    };
    let rho = config.rho();
    let mut diagnostics = Vec::new();
    let mut last: Option<(Posterior, IntervalErrors)> = None;

    for round in 0..=config.max_refinements {
        let start = Instant::now();
        let attempt = inference::ieks_solve(problem, &prior, &mesh, &init, &options).and_then(|out| {
            if is_finite_posterior(&out.posterior) {
                Ok(out)
            } else {
                Err(Error::LinearizationFailure {
                    t: f64::NAN,
                    reason: "non-finite posterior".into(),
                })
            }
        });
        let outcome = match attempt {
            Ok(out) => out,
            Err(err) => return fail(last, diagnostics, prior, err),
        };
        let post = outcome.posterior;
        prior = outcome.prior;
        let errors = match meshing::interval_errors(&post, problem, config.estimator) {
            Ok(e) if e.eps.iter().all(|x| x.is_finite()) => e,
            Ok(_) => {
                let err = Error::LinearizationFailure {
                    t: f64::NAN,
                    reason: "non-finite error estimate".into(),
                };
                return fail(Some((post, empty_errors())), diagnostics, prior, err);
            }
            Err(err) => return fail(Some((post, empty_errors())), diagnostics, prior, err),
        };
        let max_error = errors.max();
        diagnostics.push(RefinementRecord {
            round,
            n_nodes: mesh.len(),
            sigma_sq: post.sigma_sq(),
            ieks_iters: post.iterations,
            ieks_converged: post.converged,
            max_error,
            wall_time_s: start.elapsed().as_secs_f64(),
            history: outcome.history,
        });
        if max_error <= config.tol {
            return Ok(Solution {
                posterior: post,
                diagnostics,
                status: SolveStatus::Converged,
                errors,
                prior,
                failure: None,
            });
        }
        if round == config.max_refinements {
            return Ok(Solution {
                posterior: post,
                diagnostics,
                status: SolveStatus::MaxRefinementsReached,
                errors,
                prior,
                failure: None,
            });
        }
        match calibration::em_update(&post, prior.m0(), prior.sigma_sq()).and_then(|(m0, c0)| prior.clone().with_initial(m0, c0)) {
            Ok(p) => prior = p,
            Err(err) => return fail(Some((post, errors)), diagnostics, prior, err),
        }
        let (next_mesh, _) = meshing::refine(&mesh, &errors, config.tol, rho)?;
        let guess: Result<Vec<DVector<f64>>> = next_mesh
            .iter()
            .map(|&t| post.interpolate(t).map(|g| g.mean().clone()))
            .collect();
        match guess {
            Ok(g) => init = InitStrategy::UserGuess(g),
            Err(err) => return fail(Some((post, errors)), diagnostics, prior, err),
        }
        mesh = next_mesh;
        last = Some((post, errors));
    }
    unreachable!("the loop returns on its last round")
}

fn empty_errors() -> IntervalErrors {
    IntervalErrors {
        eps: Vec::new(),
        nodes_used: Vec::new(),
    }
}

fn fail(
    last: Option<(Posterior, IntervalErrors)>,
    diagnostics: Vec<RefinementRecord>,
    prior: IwpPrior,
    err: Error,
) -> Result<Solution> {
    match last {
        Some((posterior, errors)) if !diagnostics.is_empty() => Ok(Solution {
            posterior,
            diagnostics,
            status: SolveStatus::IeksFailed,
            errors,
            prior,
            failure: Some(err.to_string()),
        }),
        _ => Err(err),
    }
}
