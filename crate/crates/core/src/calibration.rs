//! Calibration of the prior hyperparameters.
//!
//! The diffusion `σ²` has a closed-form quasi-maximum-likelihood estimate from
//! the innovations of a forward pass, because all noise-free measurements make
//! every covariance proportional to `σ²`. The initial mean and covariance are
//! updated with one EM step from the smoothing marginal at `t₀`.

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_dim, Error, Result};
use crate::gaussian::triangularize;
use crate::inference::{Innovations, Posterior};

/// Smallest diffusion the solver will use.
pub const SIGMA_SQ_FLOOR: f64 = 1e-14;

pub(crate) fn floor_sigma_sq(sigma_sq: f64) -> f64 {
    if sigma_sq.is_finite() {
        sigma_sq.max(SIGMA_SQ_FLOOR)
    } else {
        sigma_sq
    }
}

/// `Ψ₀ / Ψ₁`, without the floor (zero residuals give zero).
pub fn quasi_mle_sigma(innovations: &Innovations) -> Result<f64> {
    let psi1 = innovations.psi1();
    if psi1 == 0 {
        return Err(Error::InvalidArgument("no informative innovations".into()));
    }
    Ok(innovations.psi0()? / psi1 as f64)
}

pub(crate) fn quasi_loglik_from(psi0: f64, psi1: usize, sigma_sq: f64) -> f64 {
    -0.5 * (psi0 / sigma_sq + psi1 as f64 * sigma_sq.ln())
}

/// `−½ (Ψ₀ / σ² + Ψ₁ log σ²)`.
pub fn quasi_loglik(innovations: &Innovations, sigma_sq: f64) -> Result<f64> {
    if !(sigma_sq > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sigma_sq must be positive, got {sigma_sq}"
        )));
    }
    Ok(quasi_loglik_from(innovations.psi0()?, innovations.psi1(), sigma_sq))
}

/// The EM update of the initial distribution: the new mean is the smoothing
/// mean at `t₀` and the new `C₀` is `C_MAP(t₀) + Δm Δmᵀ / σ²` with
/// `Δm = m_MAP(t₀) − m₀`. `C_MAP` excludes `σ²`. Returns `(m₀, √C₀)`.
pub fn em_update(
    posterior: &Posterior,
    m0_old: &DVector<f64>,
    sigma_sq: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if !(sigma_sq > 0.0) || !sigma_sq.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "sigma_sq must be positive, got {sigma_sq}"
        )));
    }
    let first = &posterior.nodes()[0];
    let post_sigma = posterior.sigma_sq().sqrt();
    em_step(first.mean(), &(first.cov_sqrt() / post_sigma), m0_old, sigma_sq)
}

/// [`em_update`] on raw inputs: `C_MAP = S Sᵀ` (no `σ²`).
pub fn em_step(
    m_map: &DVector<f64>,
    c_map_sqrt: &DMatrix<f64>,
    m0_old: &DVector<f64>,
    sigma_sq: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    ensure_dim("em mean", m_map.len(), m0_old.len())?;
    ensure_dim("em factor", m_map.len(), c_map_sqrt.nrows())?;
    let delta = (m_map - m0_old) / sigma_sq.sqrt();
    let mut stacked = DMatrix::zeros(m_map.len(), c_map_sqrt.ncols() + 1);
    stacked
        .view_mut((0, 0), c_map_sqrt.shape())
        .copy_from(c_map_sqrt);
    stacked.column_mut(c_map_sqrt.ncols()).copy_from(&delta);
    Ok((m_map.clone(), triangularize(&stacked)))
}
