//! Error estimation between mesh nodes and mesh refinement.
//!
//! A pointwise error `e(t)` is integrated over every interval with Bayesian
//! quadrature on the nodes `{0, 1/3, 1/2, 2/3, 1}` of the reference interval;
//! `ε_n = sqrt(∫ ‖e‖²)`. Intervals with `ε_n > tol` receive one or two new
//! nodes, placed exactly at the interior quadrature nodes so that the
//! evaluations can be reused on the refined mesh.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::inference::Posterior;
use crate::information::{self, BvProblem};

/// Which pointwise error drives refinement.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ErrorEstimatorKind {
    /// Marginal standard deviation of the solution.
    StdDev,
    /// ODE residual of the posterior mean.
    Residual,
    /// Mean square of the linearized residual under the posterior.
    ProbabilisticResidual,
}

impl ErrorEstimatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::StdDev => "std-dev",
            Self::Residual => "residual",
            Self::ProbabilisticResidual => "prob-residual",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "std-dev" => Some(Self::StdDev),
            "residual" => Some(Self::Residual),
            "prob-residual" => Some(Self::ProbabilisticResidual),
            _ => None,
        }
    }
}

/// Quadrature nodes on the reference interval `[0, 1]`.
pub const BQ_NODES: [f64; 5] = [0.0, 1.0 / 3.0, 0.5, 2.0 / 3.0, 1.0];

/// The point `t_lo + u (t_hi − t_lo)`; `u = 1` maps to `t_hi` exactly.
/// Refinement inserts points through this function as well.
pub fn interval_point(t_lo: f64, t_hi: f64, u: f64) -> f64 {
    if u == 1.0 {
        t_hi
    } else {
        t_lo + u * (t_hi - t_lo)
    }
}

/// Pointwise error at `t` (length `d`).
///
/// For [`ErrorEstimatorKind::ProbabilisticResidual`] the entries are
/// `Var(Z_i) + E(Z_i)²` for the residual `Z` linearized at the posterior mean,
/// i.e. already squared; their sum is the expected squared residual norm.
pub fn pointwise_error(
    posterior: &Posterior,
    problem: &BvProblem,
    t: f64,
    kind: ErrorEstimatorKind,
) -> Result<DVector<f64>> {
    let g = posterior.interpolate(t)?;
    let prior = posterior.prior();
    match kind {
        ErrorEstimatorKind::StdDev => {
            let std = g.std_devs();
            Ok(DVector::from_iterator(
                prior.dim(),
                (0..prior.dim()).map(|c| std[prior.index(c, 0)]),
            ))
        }
        ErrorEstimatorKind::Residual => information::ode_residual(problem, prior, g.mean(), t),
        ErrorEstimatorKind::ProbabilisticResidual => {
            let lin = information::linearize(problem, prior, g.mean(), t)?;
            let mean = &lin.h * g.mean() + &lin.b;
            let spread = &lin.h * g.cov_sqrt();
            Ok(DVector::from_iterator(
                prior.dim(),
                (0..prior.dim()).map(|i| spread.row(i).norm_squared() + mean[i] * mean[i]),
            ))
        }
    }
}

/// The integrand `‖e(t)‖²` contributed by one pointwise error.
fn squared_norm(e: &DVector<f64>, kind: ErrorEstimatorKind) -> f64 {
    match kind {
        ErrorEstimatorKind::ProbabilisticResidual => e.sum(),
        _ => e.norm_squared(),
    }
}

/// Kernels for Bayesian quadrature on `[0, 1]` (length-scale and amplitude 1).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BqKernel {
    Matern12,
    Matern32,
    Matern52,
    ExpQuad,
}

impl BqKernel {
    /// Matérn of order `ν − 1/2` for `ν ≤ 3`, exponentiated quadratic beyond.
    pub fn for_order(nu: usize) -> Self {
        match nu {
            0 | 1 => Self::Matern12,
            2 => Self::Matern32,
            3 => Self::Matern52,
            _ => Self::ExpQuad,
        }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let r = (x - y).abs();
        match self {
            Self::Matern12 => (-r).exp(),
            Self::Matern32 => {
                let c = 3.0_f64.sqrt() * r;
                (1.0 + c) * (-c).exp()
            }
            Self::Matern52 => {
                let c = 5.0_f64.sqrt() * r;
                (1.0 + c + c * c / 3.0) * (-c).exp()
            }
            Self::ExpQuad => (-0.5 * r * r).exp(),
        }
    }

    /// Kernel mean embedding `∫₀¹ k(x, y) dy`.
    pub fn embedding(&self, x: f64) -> f64 {
        let half = |a: f64| -> f64 {
            match self {
                Self::Matern12 => 1.0 - (-a).exp(),
                Self::Matern32 => {
                    let c = 3.0_f64.sqrt();
                    (2.0 - (2.0 + c * a) * (-c * a).exp()) / c
                }
                Self::Matern52 => {
                    let c = 5.0_f64.sqrt();
                    let s = c * a;
                    (8.0 / 3.0 - (-s).exp() * (8.0 + 5.0 * s + s * s) / 3.0) / c
                }
                Self::ExpQuad => (std::f64::consts::PI / 2.0).sqrt() * erf(a / 2.0_f64.sqrt()),
            }
        };
        half(x) + half(1.0 - x)
    }

    fn index(&self) -> usize {
        match self {
            Self::Matern12 => 0,
            Self::Matern32 => 1,
            Self::Matern52 => 2,
            Self::ExpQuad => 3,
        }
    }
}

/// Bayesian quadrature weights `K(X, X)⁻¹ κ(X)` for the uniform measure on `[0, 1]`.
pub fn bq_weights(kernel: BqKernel, nodes: &[f64]) -> Result<DVector<f64>> {
    let n = nodes.len();
    let gram = DMatrix::from_fn(n, n, |i, j| kernel.eval(nodes[i], nodes[j]));
    let kappa = DVector::from_iterator(n, nodes.iter().map(|&x| kernel.embedding(x)));
    if let Some(ch) = gram.clone().cholesky() {
        return Ok(ch.solve(&kappa));
    }
    let jittered = gram + DMatrix::identity(n, n) * 1e-12;
    jittered
        .cholesky()
        .map(|ch| ch.solve(&kappa))
        .ok_or_else(|| Error::SingularSystem("quadrature Gram matrix".into()))
}

/// Cached weights for [`BQ_NODES`].
pub fn standard_weights(kernel: BqKernel) -> &'static DVector<f64> {
    static CACHE: [OnceLock<DVector<f64>>; 4] = [
        OnceLock::new(),
        OnceLock::new(),
        OnceLock::new(),
        OnceLock::new(),
    ];
    CACHE[kernel.index()].get_or_init(|| {
        bq_weights(kernel, &BQ_NODES).expect("the standard quadrature nodes are distinct")
    })
}

/// `sqrt(max(0, h Σ_j w_j v_j))`.
fn accumulate(weights: &DVector<f64>, values: &[f64; 5], h: f64) -> f64 {
    let s: f64 = weights.iter().zip(values).map(|(w, v)| w * v).sum();
    (h * s).max(0.0).sqrt()
}

/// `ε` on `[t_lo, t_hi]`.
pub fn interval_error(
    posterior: &Posterior,
    problem: &BvProblem,
    t_lo: f64,
    t_hi: f64,
    kind: ErrorEstimatorKind,
) -> Result<f64> {
    let mut values = [0.0; 5];
    for (j, &u) in BQ_NODES.iter().enumerate() {
        let endpoint = j == 0 || j == BQ_NODES.len() - 1;
        if endpoint && kind == ErrorEstimatorKind::Residual {
            continue;
        }
        let e = pointwise_error(posterior, problem, interval_point(t_lo, t_hi, u), kind)?;
        values[j] = squared_norm(&e, kind);
    }
    let weights = standard_weights(BqKernel::for_order(posterior.prior().order()));
    Ok(accumulate(weights, &values, t_hi - t_lo))
}

/// `ε` on an interval from the values of `‖e‖²` at the five quadrature nodes.
pub fn interval_error_from_values(kernel: BqKernel, values: &[f64; 5], h: f64) -> f64 {
    accumulate(standard_weights(kernel), values, h)
}

/// Interval errors over a whole mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct IntervalErrors {
    pub eps: Vec<f64>,
    pub nodes_used: Vec<[f64; 5]>,
}

impl IntervalErrors {
    pub fn max(&self) -> f64 {
        self.eps.iter().cloned().fold(0.0, f64::max)
    }
}

/// `ε_n` for every interval; node evaluations are shared between neighbours.
pub fn interval_errors(
    posterior: &Posterior,
    problem: &BvProblem,
    kind: ErrorEstimatorKind,
) -> Result<IntervalErrors> {
    let mesh = posterior.mesh();
    let at_nodes: Vec<f64> = if kind == ErrorEstimatorKind::Residual {
        vec![0.0; mesh.len()]
    } else {
        mesh.iter()
            .map(|&t| Ok(squared_norm(&pointwise_error(posterior, problem, t, kind)?, kind)))
            .collect::<Result<_>>()?
    };
    let weights = standard_weights(BqKernel::for_order(posterior.prior().order()));
    let mut eps = Vec::with_capacity(mesh.len() - 1);
    let mut nodes_used = Vec::with_capacity(mesh.len() - 1);
    for n in 0..mesh.len() - 1 {
        let (lo, hi) = (mesh[n], mesh[n + 1]);
        let mut values = [at_nodes[n], 0.0, 0.0, 0.0, at_nodes[n + 1]];
        let mut pts = [lo, 0.0, 0.0, 0.0, hi];
        for j in 1..4 {
            pts[j] = interval_point(lo, hi, BQ_NODES[j]);
            values[j] = squared_norm(&pointwise_error(posterior, problem, pts[j], kind)?, kind);
        }
        eps.push(accumulate(weights, &values, hi - lo));
        nodes_used.push(pts);
    }
    Ok(IntervalErrors { eps, nodes_used })
}

/// Inserts nothing where `ε ≤ tol`, the midpoint where `ε 2^{−ρ} ≤ tol`, and
/// the two third-points otherwise. Returns the new mesh and whether it changed.
pub fn refine(mesh: &[f64], errors: &IntervalErrors, tol: f64, rho: f64) -> Result<(Vec<f64>, bool)> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    if errors.eps.len() + 1 != mesh.len() {
        return Err(Error::DimensionMismatch {
            context: "interval errors",
            expected: mesh.len().saturating_sub(1),
            found: errors.eps.len(),
        });
    }
    let mut out = Vec::with_capacity(3 * mesh.len());
    let mut changed = false;
    for n in 0..errors.eps.len() {
        let (lo, hi) = (mesh[n], mesh[n + 1]);
        let eps = errors.eps[n];
        out.push(lo);
        if eps <= tol {
            continue;
        }
        changed = true;
        if eps * 2f64.powf(-rho) <= tol {
            out.push(interval_point(lo, hi, BQ_NODES[2]));
        } else {
            out.push(interval_point(lo, hi, BQ_NODES[1]));
            out.push(interval_point(lo, hi, BQ_NODES[3]));
        }
    }
    out.push(*mesh.last().expect("mesh is nonempty"));
    Ok((out, changed))
}
