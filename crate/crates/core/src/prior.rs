//! The ν-times integrated Wiener process prior and its exact discretization.
//!
//! The state stacks, for each of the `d` coordinates, the values
//! `(y, y', ..., y^(ν))`; index `c (ν + 1) + q` holds the `q`-th derivative of
//! coordinate `c`.

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_dim, Error, Result};

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Gauss–Markov prior `dY = A Y dt + σ B dW`, `Y(t₀) ~ N(m₀, σ² C₀)`.
#[derive(Clone, Debug, PartialEq)]
pub struct IwpPrior {
    dim: usize,
    order: usize,
    sigma_sq: f64,
    m0: DVector<f64>,
    c0_sqrt: DMatrix<f64>,
    /// Cholesky factor of the step-free diffusion matrix for one coordinate.
    unit_q_chol: DMatrix<f64>,
}

impl IwpPrior {
    /// Prior with `σ = 1`, `m₀ = 0`, `C₀ = I`.
    pub fn new(dim: usize, order: usize) -> Result<Self> {
        if dim == 0 || order == 0 {
            return Err(Error::InvalidArgument(format!(
                "prior needs dim ≥ 1 and order ≥ 1, got dim = {dim}, order = {order}"
            )));
        }
        let k = dim * (order + 1);
        Ok(Self {
            dim,
            order,
            sigma_sq: 1.0,
            m0: DVector::zeros(k),
            c0_sqrt: DMatrix::identity(k, k),
            unit_q_chol: unit_q_cholesky(order),
        })
    }

    pub fn with_sigma_sq(mut self, sigma_sq: f64) -> Result<Self> {
        if !(sigma_sq > 0.0) || !sigma_sq.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "sigma_sq must be positive and finite, got {sigma_sq}"
            )));
        }
        self.sigma_sq = sigma_sq;
        Ok(self)
    }

    pub fn with_initial(mut self, m0: DVector<f64>, c0_sqrt: DMatrix<f64>) -> Result<Self> {
        ensure_dim("prior initial mean", self.state_dim(), m0.len())?;
        ensure_dim("prior initial factor", self.state_dim(), c0_sqrt.nrows())?;
        self.m0 = m0;
        self.c0_sqrt = c0_sqrt;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn sigma_sq(&self) -> f64 {
        self.sigma_sq
    }

    pub fn m0(&self) -> &DVector<f64> {
        &self.m0
    }

    pub fn c0_sqrt(&self) -> &DMatrix<f64> {
        &self.c0_sqrt
    }

    pub fn state_dim(&self) -> usize {
        self.dim * (self.order + 1)
    }

    /// Index of derivative `q` of coordinate `coord` in the stacked state.
    pub fn index(&self, coord: usize, q: usize) -> usize {
        coord * (self.order + 1) + q
    }

    /// `d × d(ν+1)` selector of the `q`-th derivative.
    pub fn projection(&self, q: usize) -> Result<DMatrix<f64>> {
        if q > self.order {
            return Err(Error::InvalidArgument(format!(
                "derivative {q} exceeds prior order {}",
                self.order
            )));
        }
        let mut p = DMatrix::zeros(self.dim, self.state_dim());
        for c in 0..self.dim {
            p[(c, self.index(c, q))] = 1.0;
        }
        Ok(p)
    }

    /// Extracts the `q`-th derivative from a stacked state.
    pub fn select(&self, state: &DVector<f64>, q: usize) -> DVector<f64> {
        DVector::from_iterator(self.dim, (0..self.dim).map(|c| state[self.index(c, q)]))
    }

    /// Exact transition over a step `h ≥ 0`, without the `σ²` factor.
    pub fn discretize(&self, h: f64) -> Result<Transition> {
        if !(h >= 0.0) || !h.is_finite() {
            return Err(Error::InvalidArgument(format!("step must be ≥ 0, got {h}")));
        }
        let n = self.order + 1;
        let k = self.state_dim();
        if h == 0.0 {
            return Ok(Transition {
                phi: DMatrix::identity(k, k),
                q_sqrt: DMatrix::zeros(k, k),
                scale: DVector::from_element(k, 1.0),
            });
        }
        let t = self.unit_scaling(h);
        let mut phi1 = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                phi1[(i, j)] = h.powi((j - i) as i32) / factorial(j - i);
            }
        }
        let mut q1 = self.unit_q_chol.clone();
        for i in 0..n {
            q1.row_mut(i).scale_mut(t[i]);
        }
        let mut phi = DMatrix::zeros(k, k);
        let mut q_sqrt = DMatrix::zeros(k, k);
        let mut scale = DVector::zeros(k);
        for c in 0..self.dim {
            let o = c * n;
            phi.view_mut((o, o), (n, n)).copy_from(&phi1);
            q_sqrt.view_mut((o, o), (n, n)).copy_from(&q1);
            scale.rows_mut(o, n).copy_from(&t);
        }
        Ok(Transition { phi, q_sqrt, scale })
    }

    /// Diagonal scaling `T` with `Φ = T Φ̆ T⁻¹` and `Q = T Q̆ Tᵀ`, where `Φ̆`
    /// and `Q̆` do not depend on `h`. Returned as the diagonals of `T` and `T⁻¹`.
    pub fn precondition_factors(&self, h: f64) -> Result<(DVector<f64>, DVector<f64>)> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "preconditioning needs a positive step, got {h}"
            )));
        }
        let n = self.order + 1;
        let t1 = self.unit_scaling(h);
        let t = DVector::from_iterator(self.state_dim(), (0..self.state_dim()).map(|i| t1[i % n]));
        let t_inv = t.map(|v| 1.0 / v);
        Ok((t, t_inv))
    }

    fn unit_scaling(&self, h: f64) -> DVector<f64> {
        let nu = self.order;
        DVector::from_iterator(
            nu + 1,
            (0..=nu).map(|i| h.sqrt() * h.powi((nu - i) as i32) / factorial(nu - i)),
        )
    }

    /// The step-free transition `Φ̆` of one coordinate.
    pub fn unit_phi(&self) -> DMatrix<f64> {
        let n = self.order + 1;
        DMatrix::from_fn(n, n, |i, j| binomial(self.order - i, self.order - j))
    }

    /// The step-free diffusion `Q̆` of one coordinate, `Q̆_ij = 1 / (2ν + 1 − i − j)`.
    pub fn unit_q(&self) -> DMatrix<f64> {
        unit_q(self.order)
    }
}

fn unit_q(order: usize) -> DMatrix<f64> {
    let n = order + 1;
    DMatrix::from_fn(n, n, |i, j| 1.0 / (2 * order + 1 - i - j) as f64)
}

fn unit_q_cholesky(order: usize) -> DMatrix<f64> {
    unit_q(order)
        .cholesky()
        .expect("the step-free diffusion matrix is positive definite")
        .l()
}

/// One step of the discretized prior: `Y(t+h) | Y(t) ~ N(Φ Y(t), σ² Q)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub phi: DMatrix<f64>,
    /// `Q = q_sqrt q_sqrtᵀ` (no `σ²`).
    pub q_sqrt: DMatrix<f64>,
    /// Diagonal of the preconditioner `T` (all ones for a zero step).
    pub scale: DVector<f64>,
}

impl Transition {
    pub fn q(&self) -> DMatrix<f64> {
        &self.q_sqrt * self.q_sqrt.transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use proptest::prelude::*;

    fn close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
        a.shape() == b.shape() && (a - b).amax() <= tol
    }

    #[test]
    fn zero_step_is_identity() {
        let p = IwpPrior::new(1, 1).unwrap();
        let tr = p.discretize(0.0).unwrap();
        assert_eq!(tr.phi, DMatrix::identity(2, 2));
        assert_eq!(tr.q(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn once_integrated_unit_step() {
        let p = IwpPrior::new(1, 1).unwrap();
        let tr = p.discretize(1.0).unwrap();
        assert!(close(&tr.phi, &dmatrix![1.0, 1.0; 0.0, 1.0], 0.0));
        assert!(close(&tr.q(), &dmatrix![1.0 / 3.0, 0.5; 0.5, 1.0], 1e-15));
    }

    #[test]
    fn twice_integrated_unit_step() {
        let p = IwpPrior::new(1, 2).unwrap();
        let tr = p.discretize(1.0).unwrap();
        let phi = dmatrix![1.0, 1.0, 0.5; 0.0, 1.0, 1.0; 0.0, 0.0, 1.0];
        let q = dmatrix![
            1.0 / 20.0, 1.0 / 8.0, 1.0 / 6.0;
            1.0 / 8.0, 1.0 / 3.0, 0.5;
            1.0 / 6.0, 0.5, 1.0
        ];
        assert!(close(&tr.phi, &phi, 0.0));
        assert!(close(&tr.q(), &q, 1e-15));
    }

    #[test]
    fn preconditioner_inverts() {
        let p = IwpPrior::new(2, 4).unwrap();
        for h in [1e-6, 0.3, 1.0, 7.0] {
            let (t, ti) = p.precondition_factors(h).unwrap();
            for i in 0..t.len() {
                assert!((t[i] * ti[i] - 1.0).abs() <= 2.0 * f64::EPSILON);
            }
        }
        assert!(p.precondition_factors(0.0).is_err());
    }

    #[test]
    fn unit_step_scaling_recovers_step_free_q() {
        let p = IwpPrior::new(1, 3).unwrap();
        let tr = p.discretize(1.0).unwrap();
        let (t, _) = p.precondition_factors(1.0).unwrap();
        let tinv = DMatrix::from_diagonal(&t.map(|v| 1.0 / v));
        let rescaled = &tinv * tr.q() * &tinv;
        assert!(close(&rescaled, &p.unit_q(), 1e-14));
        let rescaled_phi = &tinv * &tr.phi * DMatrix::from_diagonal(&t);
        assert!(close(&rescaled_phi, &p.unit_phi(), 1e-14));
    }

    #[test]
    fn rescaled_q_conditioning_is_step_free() {
        let p = IwpPrior::new(1, 4).unwrap();
        let cond = |h: f64| {
            let tr = p.discretize(h).unwrap();
            let (_, ti) = p.precondition_factors(h).unwrap();
            let d = DMatrix::from_diagonal(&ti);
            let s = (&d * tr.q() * &d).singular_values();
            s.max() / s.min()
        };
        let (a, b) = (cond(1e-6), cond(1.0));
        assert!(a / b < 10.0 && b / a < 10.0, "{a} vs {b}");
    }

    #[test]
    fn projections_select_derivatives() {
        let p = IwpPrior::new(1, 1).unwrap();
        let x = DVector::from_vec(vec![3.0, -4.0]);
        assert_eq!((p.projection(0).unwrap() * &x)[0], 3.0);
        assert_eq!((p.projection(1).unwrap() * &x)[0], -4.0);
        assert!(p.projection(2).is_err());
        let p = IwpPrior::new(3, 2).unwrap();
        for q in 0..=2 {
            let pq = p.projection(q).unwrap();
            assert_eq!(&pq * pq.transpose(), DMatrix::identity(3, 3));
        }
    }

    #[test]
    fn q_matches_quadrature() {
        // Q(h) = ∫₀ʰ Φ(h − τ) e_ν e_νᵀ Φ(h − τ)ᵀ dτ by composite Simpson.
        for nu in 1..=4 {
            let p = IwpPrior::new(1, nu).unwrap();
            let h = 0.7;
            let n = nu + 1;
            let steps = 2000;
            let mut acc = DMatrix::zeros(n, n);
            for s in 0..=steps {
                let tau = h * s as f64 / steps as f64;
                let w = if s == 0 || s == steps {
                    1.0
                } else if s % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                let col = DVector::from_fn(n, |i, _| {
                    let j = nu - i;
                    (h - tau).powi(j as i32) / factorial(j)
                });
                acc += w * &col * col.transpose();
            }
            acc *= h / (3.0 * steps as f64);
            let q = p.discretize(h).unwrap().q();
            assert!(close(&q, &acc, 1e-8), "nu = {nu}\n{q}\n{acc}");
        }
    }

    proptest! {
        #[test]
        fn chapman_kolmogorov(h1 in 0.0..0.5f64, h2 in 0.0..0.5f64, nu in 1usize..=6) {
            let p = IwpPrior::new(1, nu).unwrap();
            let a = p.discretize(h1).unwrap();
            let b = p.discretize(h2).unwrap();
            let ab = p.discretize(h1 + h2).unwrap();
            let phi = &b.phi * &a.phi;
            let q = &b.phi * a.q() * b.phi.transpose() + b.q();
            prop_assert!(close(&phi, &ab.phi, 1e-10));
            prop_assert!(close(&q, &ab.q(), 1e-10));
        }
    }
}
