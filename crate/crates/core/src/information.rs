//! Boundary value problems and their measurement models.
//!
//! An `m`-th order problem `y^(m) = f(y, y', ..., y^(m−1), t)` is observed
//! through the information operator `ℓ(Y)(t) = Y_m(t) − f(Y_0(t), ..., Y_{m−1}(t), t)`,
//! which the solver conditions to zero on every mesh node.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::bridge::BoundaryConditions;
use crate::error::{ensure_dim, Error, Result};
use crate::gaussian::AffineMap;
use crate::prior::IwpPrior;

/// `f(derivs, t)` where `derivs[q]` is the `q`-th derivative, `q < m`.
pub type VectorField = Arc<dyn Fn(&[DVector<f64>], f64) -> DVector<f64> + Send + Sync>;
/// Returns `∂f/∂y^(q)` for `q = 0, ..., m − 1`.
pub type Jacobian = Arc<dyn Fn(&[DVector<f64>], f64) -> Vec<DMatrix<f64>> + Send + Sync>;

/// A two-point boundary value problem of order `m` in `d` dimensions.
#[derive(Clone)]
pub struct BvProblem {
    pub name: String,
    pub dim: usize,
    pub order: usize,
    pub f: VectorField,
    pub jac: Option<Jacobian>,
    pub bc: BoundaryConditions,
}

impl fmt::Debug for BvProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BvProblem")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("order", &self.order)
            .field("has_jacobian", &self.jac.is_some())
            .field("bc", &self.bc)
            .finish()
    }
}

impl BvProblem {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        order: usize,
        f: VectorField,
        jac: Option<Jacobian>,
        bc: BoundaryConditions,
    ) -> Result<Self> {
        if dim == 0 || order == 0 {
            return Err(Error::InvalidArgument(format!(
                "problem needs dim ≥ 1 and order ≥ 1, got dim = {dim}, order = {order}"
            )));
        }
        for (side, cols) in [("left", bc.left.ncols()), ("right", bc.right.ncols())] {
            let rows = if side == "left" { bc.left.nrows() } else { bc.right.nrows() };
            if rows > 0 && (!cols.is_multiple_of(dim) || cols / dim > order || cols == 0) {
                return Err(Error::InvalidArgument(format!(
                    "{side} boundary operator has {cols} columns; expected d·k with k ≤ {order}"
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            dim,
            order,
            f,
            jac,
            bc,
        })
    }

    pub fn t0(&self) -> f64 {
        self.bc.t0
    }

    pub fn tmax(&self) -> f64 {
        self.bc.tmax
    }

    /// Warns (returns false) unless the boundary rows match `d m`.
    pub fn boundary_count_is_standard(&self) -> bool {
        self.bc.left_rows() + self.bc.right_rows() == self.dim * self.order
    }

    fn check_prior(&self, prior: &IwpPrior) -> Result<()> {
        ensure_dim("prior dimension", self.dim, prior.dim())?;
        if prior.order() < self.order {
            return Err(Error::InvalidArgument(format!(
                "prior order {} is below the ODE order {}",
                prior.order(),
                self.order
            )));
        }
        Ok(())
    }

    fn derivs(&self, prior: &IwpPrior, state: &DVector<f64>) -> Vec<DVector<f64>> {
        (0..self.order).map(|q| prior.select(state, q)).collect()
    }

    fn eval(&self, derivs: &[DVector<f64>], t: f64) -> Result<DVector<f64>> {
        let out = (self.f)(derivs, t);
        ensure_dim("vector field output", self.dim, out.len())?;
        Ok(out)
    }

    /// Jacobians `∂f/∂y^(q)`, analytic when available, otherwise by central
    /// differences with step `1e-6 (1 + |x|)`.
    pub fn jacobians(&self, derivs: &[DVector<f64>], t: f64) -> Result<Vec<DMatrix<f64>>> {
        if let Some(jac) = &self.jac {
            let js = jac(derivs, t);
            ensure_dim("jacobian count", self.order, js.len())?;
            for j in &js {
                ensure_dim("jacobian rows", self.dim, j.nrows())?;
                ensure_dim("jacobian cols", self.dim, j.ncols())?;
            }
            return Ok(js);
        }
        let mut js = Vec::with_capacity(self.order);
        let mut work = derivs.to_vec();
        for q in 0..self.order {
            let mut j = DMatrix::zeros(self.dim, self.dim);
            for c in 0..self.dim {
                let x = derivs[q][c];
                let step = 1e-6 * (1.0 + x.abs());
                work[q][c] = x + step;
                let plus = self.eval(&work, t)?;
                work[q][c] = x - step;
                let minus = self.eval(&work, t)?;
                work[q][c] = x;
                j.column_mut(c).copy_from(&((plus - minus) / (2.0 * step)));
            }
            js.push(j);
        }
        Ok(js)
    }
}

/// `ℓ(Y)(t) = P_m Y − f(P_{m−1} Y, ..., P_0 Y, t)`.
pub fn ode_residual(
    problem: &BvProblem,
    prior: &IwpPrior,
    state: &DVector<f64>,
    t: f64,
) -> Result<DVector<f64>> {
    problem.check_prior(prior)?;
    ensure_dim("state", prior.state_dim(), state.len())?;
    let derivs = problem.derivs(prior, state);
    Ok(prior.select(state, problem.order) - problem.eval(&derivs, t)?)
}

/// First-order Taylor expansion `ℓ(Y)(t) ≈ H Y + b` around `point`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearizedObservation {
    pub h: DMatrix<f64>,
    pub b: DVector<f64>,
    pub point: DVector<f64>,
    pub t: f64,
}

impl LinearizedObservation {
    pub fn as_affine_map(&self) -> AffineMap {
        AffineMap {
            matrix: self.h.clone(),
            offset: self.b.clone(),
        }
    }
}

pub fn linearize(
    problem: &BvProblem,
    prior: &IwpPrior,
    point: &DVector<f64>,
    t: f64,
) -> Result<LinearizedObservation> {
    problem.check_prior(prior)?;
    ensure_dim("linearization point", prior.state_dim(), point.len())?;
    let derivs = problem.derivs(prior, point);
    let fval = problem.eval(&derivs, t)?;
    if fval.iter().any(|v| !v.is_finite()) {
        return Err(Error::LinearizationFailure {
            t,
            reason: "vector field is not finite".into(),
        });
    }
    let js = problem.jacobians(&derivs, t)?;
    if js.iter().any(|j| j.iter().any(|v| !v.is_finite())) {
        return Err(Error::LinearizationFailure {
            t,
            reason: "jacobian is not finite".into(),
        });
    }
    let mut h = DMatrix::zeros(problem.dim, prior.state_dim());
    for c in 0..problem.dim {
        h[(c, prior.index(c, problem.order))] = 1.0;
    }
    for (q, j) in js.iter().enumerate() {
        for r in 0..problem.dim {
            for c in 0..problem.dim {
                h[(r, prior.index(c, q))] -= j[(r, c)];
            }
        }
    }
    let residual = prior.select(point, problem.order) - fval;
    let b = residual - &h * point;
    Ok(LinearizedObservation {
        h,
        b,
        point: point.clone(),
        t,
    })
}

/// Boundary information operators `(ℓ_L, ℓ_R)` acting on `Y(t₀)` and `Y(t_max)`.
pub fn boundary_observations(problem: &BvProblem, prior: &IwpPrior) -> Result<(AffineMap, AffineMap)> {
    problem.check_prior(prior)?;
    Ok((problem.bc.left_map(prior)?, problem.bc.right_map(prior)?))
}
