//! Gaussian bridges: the prior conditioned on the boundary conditions.
//!
//! The initial state is conditioned on both boundary observations, and every
//! transition is replaced by the Markov bridge `p(Y(t) | Y(s), ℓ_R)`. Chaining
//! them yields a process whose paths satisfy the boundary conditions exactly.

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_dim, Error, Result};
use crate::gaussian::{self, AffineConditional, AffineMap, Gaussian, Innovation};
use crate::prior::IwpPrior;

/// Linear two-point boundary conditions `L ȳ(t₀) = y₀`, `R ȳ(t_max) = y_max`.
///
/// `ȳ` is the derivative stack `(y, y', ..., y^(k−1))` of length `d k`; most
/// problems use `k = 1`, i.e. conditions on the solution values only.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryConditions {
    pub t0: f64,
    pub tmax: f64,
    pub left: DMatrix<f64>,
    pub y0: DVector<f64>,
    pub right: DMatrix<f64>,
    pub ymax: DVector<f64>,
}

impl BoundaryConditions {
    pub fn new(
        t0: f64,
        tmax: f64,
        left: DMatrix<f64>,
        y0: DVector<f64>,
        right: DMatrix<f64>,
        ymax: DVector<f64>,
    ) -> Result<Self> {
        if !(t0 < tmax) || !t0.is_finite() || !tmax.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "boundary interval must satisfy t0 < tmax, got [{t0}, {tmax}]"
            )));
        }
        ensure_dim("left boundary values", left.nrows(), y0.len())?;
        ensure_dim("right boundary values", right.nrows(), ymax.len())?;
        Ok(Self {
            t0,
            tmax,
            left,
            y0,
            right,
            ymax,
        })
    }

    /// Dirichlet conditions `y(t₀) = y₀`, `y(t_max) = y_max` on all coordinates.
    pub fn dirichlet(t0: f64, tmax: f64, y0: DVector<f64>, ymax: DVector<f64>) -> Result<Self> {
        let d = y0.len();
        ensure_dim("dirichlet values", d, ymax.len())?;
        Self::new(
            t0,
            tmax,
            DMatrix::identity(d, d),
            y0,
            DMatrix::identity(d, d),
            ymax,
        )
    }

    pub fn left_rows(&self) -> usize {
        self.left.nrows()
    }

    pub fn right_rows(&self) -> usize {
        self.right.nrows()
    }

    /// `ℓ_L(Y) = L P̄ Y(t₀) − y₀` as an affine map on the state.
    pub fn left_map(&self, prior: &IwpPrior) -> Result<AffineMap> {
        AffineMap::new(&self.left * stack_selector(prior, self.left.ncols())?, -&self.y0)
    }

    /// `ℓ_R(Y) = R P̄ Y(t_max) − y_max` as an affine map on the state.
    pub fn right_map(&self, prior: &IwpPrior) -> Result<AffineMap> {
        AffineMap::new(&self.right * stack_selector(prior, self.right.ncols())?, -&self.ymax)
    }
}

/// Selector of the derivative stack `(y, ..., y^(k−1))` with `k = cols / d`.
fn stack_selector(prior: &IwpPrior, cols: usize) -> Result<DMatrix<f64>> {
    let d = prior.dim();
    if cols == 0 || !cols.is_multiple_of(d) || cols / d > prior.order() {
        return Err(Error::InvalidArgument(format!(
            "boundary operator has {cols} columns; expected a multiple of {d} covering at most {} derivatives",
            prior.order()
        )));
    }
    let mut sel = DMatrix::zeros(cols, prior.state_dim());
    for q in 0..cols / d {
        for c in 0..d {
            sel[(q * d + c, prior.index(c, q))] = 1.0;
        }
    }
    Ok(sel)
}

/// The plain prior transition from `t` to `t_next` as a conditional, with its
/// preconditioner.
pub fn prior_conditional(
    prior: &IwpPrior,
    t: f64,
    t_next: f64,
) -> Result<(AffineConditional, DVector<f64>)> {
    let tr = prior.discretize(t_next - t)?;
    let sigma = prior.sigma_sq().sqrt();
    let cond = AffineConditional::new(AffineMap::linear(tr.phi), tr.q_sqrt * sigma)?;
    Ok((cond, tr.scale))
}

/// `p(Y(t₀) | ℓ_L = 0, ℓ_R = 0)` under the prior, plus the innovations of the
/// two conditioning steps (normalized to unit `σ`).
pub fn bridge_initial_with_innovations(
    prior: &IwpPrior,
    bc: &BoundaryConditions,
) -> Result<(Gaussian, [Innovation; 2])> {
    let sigma = prior.sigma_sq().sqrt();
    let init = Gaussian::new(prior.m0().clone(), prior.c0_sqrt() * sigma)?;
    let left = bc.left_map(prior)?;
    let zeros_l = DVector::zeros(left.rows());
    let upd_l = gaussian::update(&init, &left, &zeros_l, None, Some(gaussian::NEGLIGIBLE_STD))
        .map_err(|e| boundary_context(e, "left"))?;

    let right = bc.right_map(prior)?;
    let tr = prior.discretize(bc.tmax - bc.t0)?;
    let obs = AffineMap::new(&right.matrix * &tr.phi, right.offset.clone())?;
    let noise = &right.matrix * &tr.q_sqrt * sigma;
    let zeros_r = DVector::zeros(right.rows());
    let upd_r = gaussian::update(
        &upd_l.posterior,
        &obs,
        &zeros_r,
        Some(&noise),
        Some(gaussian::NEGLIGIBLE_STD),
    )
    .map_err(|e| boundary_context(e, "right"))?;
    Ok((
        upd_r.posterior,
        [
            upd_l.innovation.scaled(1.0 / sigma),
            upd_r.innovation.scaled(1.0 / sigma),
        ],
    ))
}

/// `p(Y(t₀) | ℓ_L = 0, ℓ_R = 0)` under the prior.
pub fn bridge_initial(prior: &IwpPrior, bc: &BoundaryConditions) -> Result<Gaussian> {
    Ok(bridge_initial_with_innovations(prior, bc)?.0)
}

fn boundary_context(err: Error, side: &str) -> Error {
    match err {
        Error::RankDeficient { context, row } => Error::RankDeficient {
            context: format!("{side} boundary condition: {context}"),
            row,
        },
        other => other,
    }
}

/// The Markov bridge `p(Y(t_next) | Y(t), ℓ_R = 0)` as an affine conditional,
/// with the preconditioner of the underlying prior step.
///
/// Writing `Y(t_next) = Φ₁ x + e₁` and `Y(t_max) = Φ₂ Y(t_next) + e₂`, the
/// right boundary observation is linear in the noise `e₁`; conditioning `e₁`
/// on it gives `Y(t_next) | x ~ N((Φ₁ − K A_R Φ₂ Φ₁) x − K b_R, S_post S_postᵀ)`.
pub fn bridge_conditional(
    prior: &IwpPrior,
    bc: &BoundaryConditions,
    t: f64,
    t_next: f64,
) -> Result<(AffineConditional, DVector<f64>)> {
    if !(bc.t0 <= t && t < t_next && t_next <= bc.tmax) {
        return Err(Error::InvalidArgument(format!(
            "bridge step needs t0 ≤ t < t_next ≤ tmax, got t = {t}, t_next = {t_next}"
        )));
    }
    let (plain, scale) = prior_conditional(prior, t, t_next)?;
    if bc.right_rows() == 0 {
        return Ok((plain, scale));
    }
    let sigma = prior.sigma_sq().sqrt();
    let right = bc.right_map(prior)?;
    let rest = prior.discretize(bc.tmax - t_next)?;
    let obs_matrix = &right.matrix * &rest.phi;
    let noise = &right.matrix * &rest.q_sqrt * sigma;
    let noise = if t_next == bc.tmax { None } else { Some(&noise) };

    let k = prior.state_dim();
    let e1 = Gaussian::new(DVector::zeros(k), plain.noise_sqrt.clone())?;
    let upd = gaussian::update(
        &e1,
        &AffineMap::linear(obs_matrix.clone()),
        &DVector::zeros(right.rows()),
        noise,
        None,
    )
    .map_err(|e| match e {
        Error::RankDeficient { context, row } => Error::RankDeficient {
            context: format!("bridge step [{t}, {t_next}]: {context}"),
            row,
        },
        other => other,
    })?;
    let phi1 = &plain.map.matrix;
    let matrix = phi1 - &upd.gain * &obs_matrix * phi1;
    let offset = -(&upd.gain * &right.offset);
    let (_, post_sqrt) = upd.posterior.into_parts();
    let cond = AffineConditional::new(AffineMap::new(matrix, offset)?, post_sqrt)?;
    Ok((cond, scale))
}

/// Bridge prediction of the belief at `t` to `t_next`.
pub fn bridge_transition(
    prior: &IwpPrior,
    bc: &BoundaryConditions,
    t: f64,
    t_next: f64,
    state: &Gaussian,
) -> Result<Gaussian> {
    let (cond, scale) = bridge_conditional(prior, bc, t, t_next)?;
    cond.marginalize(state, Some(&scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn scalar_bc(y0: f64, ymax: f64) -> BoundaryConditions {
        BoundaryConditions::dirichlet(0.0, 1.0, dvector![y0], dvector![ymax]).unwrap()
    }

    /// Dense conditioning of a joint Gaussian on `obs · x = data` (noise-free).
    fn dense_condition(
        mean: &DVector<f64>,
        cov: &DMatrix<f64>,
        obs: &DMatrix<f64>,
        data: &DVector<f64>,
    ) -> (DVector<f64>, DMatrix<f64>) {
        let s = obs * cov * obs.transpose();
        let k = cov * obs.transpose() * s.try_inverse().unwrap();
        let m = mean + &k * (data - obs * mean);
        let c = cov - &k * obs * cov;
        (m, c)
    }

    #[test]
    fn initial_bridge_fixes_left_value() {
        let prior = IwpPrior::new(1, 1).unwrap();
        let bc = scalar_bc(0.7, -0.3);
        let g = bridge_initial(&prior, &bc).unwrap();
        assert!((g.mean()[0] - 0.7).abs() < 1e-14);
        assert!(g.std_devs()[0] < 1e-14);
    }

    #[test]
    fn initial_bridge_pushed_to_end_hits_right_value() {
        let prior = IwpPrior::new(1, 1).unwrap();
        let bc = scalar_bc(0.7, -0.3);
        let g = bridge_initial(&prior, &bc).unwrap();
        let end = bridge_transition(&prior, &bc, 0.0, 1.0, &g).unwrap();
        assert!((end.mean()[0] + 0.3).abs() < 1e-13);
        assert!(end.std_devs()[0] < 1e-10);
    }

    #[test]
    fn terminal_bridge_step_is_dirac_on_right_subspace() {
        let prior = IwpPrior::new(1, 2).unwrap();
        let bc = scalar_bc(1.0, 2.0);
        let g = bridge_initial(&prior, &bc).unwrap();
        let mid = bridge_transition(&prior, &bc, 0.0, 0.4, &g).unwrap();
        let end = bridge_transition(&prior, &bc, 0.4, 1.0, &mid).unwrap();
        assert!((end.mean()[0] - 2.0).abs() < 1e-12);
        assert!(end.std_devs()[0] <= 1e-10);
    }

    #[test]
    fn empty_right_condition_is_plain_prediction() {
        let prior = IwpPrior::new(1, 2).unwrap();
        let bc = BoundaryConditions::new(
            0.0,
            1.0,
            DMatrix::identity(1, 1),
            dvector![1.0],
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
        )
        .unwrap();
        let state = Gaussian::new(dvector![1.0, 0.5, -0.2], DMatrix::identity(3, 3)).unwrap();
        let out = bridge_transition(&prior, &bc, 0.2, 0.5, &state).unwrap();
        let tr = prior.discretize(0.3).unwrap();
        let mean = &tr.phi * state.mean();
        let cov = &tr.phi * state.cov() * tr.phi.transpose() + tr.q();
        assert!((out.mean() - mean).amax() < 1e-14);
        assert!((out.cov() - cov).amax() < 1e-13);
    }

    #[test]
    fn initial_bridge_matches_dense_joint_conditioning() {
        let prior = IwpPrior::new(2, 2).unwrap().with_sigma_sq(1.7).unwrap();
        let bc = BoundaryConditions::new(
            0.0,
            0.8,
            DMatrix::from_row_slice(1, 2, &[1.0, 0.5]),
            dvector![0.3],
            DMatrix::from_row_slice(1, 2, &[-0.2, 1.0]),
            dvector![1.1],
        )
        .unwrap();
        let g = bridge_initial(&prior, &bc).unwrap();
        // joint of (Y(t0), Y(tmax))
        let k = prior.state_dim();
        let tr = prior.discretize(0.8).unwrap();
        let c0 = prior.c0_sqrt() * prior.c0_sqrt().transpose() * prior.sigma_sq();
        let mut cov = DMatrix::zeros(2 * k, 2 * k);
        cov.view_mut((0, 0), (k, k)).copy_from(&c0);
        let cross = &c0 * tr.phi.transpose();
        cov.view_mut((0, k), (k, k)).copy_from(&cross);
        cov.view_mut((k, 0), (k, k)).copy_from(&cross.transpose());
        let end = &tr.phi * &c0 * tr.phi.transpose() + tr.q() * prior.sigma_sq();
        cov.view_mut((k, k), (k, k)).copy_from(&end);
        let mean = DVector::zeros(2 * k);
        let lm = bc.left_map(&prior).unwrap();
        let rm = bc.right_map(&prior).unwrap();
        let mut obs = DMatrix::zeros(2, 2 * k);
        obs.view_mut((0, 0), (1, k)).copy_from(&lm.matrix);
        obs.view_mut((1, k), (1, k)).copy_from(&rm.matrix);
        let data = dvector![0.3, 1.1];
        let (m, c) = dense_condition(&mean, &cov, &obs, &data);
        assert!((g.mean() - m.rows(0, k)).amax() < 1e-10);
        assert!((g.cov() - c.view((0, 0), (k, k))).amax() < 1e-10);
    }

    #[test]
    fn bridge_step_matches_three_point_oracle() {
        let prior = IwpPrior::new(1, 3).unwrap();
        let bc = scalar_bc(0.0, 1.0);
        let (t, tn, tm) = (0.2, 0.55, 1.0);
        // the bridge conditions on a known state; its mixture over a belief
        // is covered by the chain tests
        let state = Gaussian::dirac(dvector![0.1, 0.9, -0.3, 0.2]);
        let out = bridge_transition(&prior, &bc, t, tn, &state).unwrap();
        let k = 4;
        let a = prior.discretize(tn - t).unwrap();
        let b = prior.discretize(tm - tn).unwrap();
        let c1 = a.q();
        let c2 = &b.phi * &c1 * b.phi.transpose() + b.q();
        let mut cov = DMatrix::zeros(2 * k, 2 * k);
        cov.view_mut((0, 0), (k, k)).copy_from(&c1);
        let x = &c1 * b.phi.transpose();
        cov.view_mut((0, k), (k, k)).copy_from(&x);
        cov.view_mut((k, 0), (k, k)).copy_from(&x.transpose());
        cov.view_mut((k, k), (k, k)).copy_from(&c2);
        let m1 = &a.phi * state.mean();
        let m2 = &b.phi * &m1;
        let mut mean = DVector::zeros(2 * k);
        mean.rows_mut(0, k).copy_from(&m1);
        mean.rows_mut(k, k).copy_from(&m2);
        let mut obs = DMatrix::zeros(1, 2 * k);
        obs[(0, k)] = 1.0;
        let (m, cc) = dense_condition(&mean, &cov, &obs, &dvector![1.0]);
        assert!((out.mean() - m.rows(0, k)).amax() < 1e-8);
        assert!((out.cov() - cc.view((0, 0), (k, k))).amax() < 1e-8);
    }

    #[test]
    fn sigma_scales_bridge_covariances() {
        let bc = scalar_bc(0.5, -1.0);
        let p1 = IwpPrior::new(1, 2).unwrap();
        let p2 = p1.clone().with_sigma_sq(4.0).unwrap();
        let g1 = bridge_initial(&p1, &bc).unwrap();
        let g2 = bridge_initial(&p2, &bc).unwrap();
        assert!((g1.mean() - g2.mean()).amax() < 1e-12);
        assert!((g1.cov() * 4.0 - g2.cov()).amax() < 1e-12);
        let s1 = bridge_transition(&p1, &bc, 0.0, 0.3, &g1).unwrap();
        let s2 = bridge_transition(&p2, &bc, 0.0, 0.3, &g2).unwrap();
        assert!((s1.mean() - s2.mean()).amax() < 1e-12);
        assert!((s1.cov() * 4.0 - s2.cov()).amax() < 1e-12);
    }

    #[test]
    fn inconsistent_left_conditions_are_rejected() {
        let prior = IwpPrior::new(1, 1).unwrap();
        let bc = BoundaryConditions::new(
            0.0,
            1.0,
            DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            dvector![0.0, 1.0],
            DMatrix::identity(1, 1),
            dvector![0.0],
        )
        .unwrap();
        assert!(matches!(
            bridge_initial(&prior, &bc),
            Err(Error::RankDeficient { .. })
        ));
    }
}
