//! Square-root Gaussian algebra.
//!
//! Every covariance is carried as a factor `S` with `C = S Sᵀ`. Factors may be
//! rectangular; zero-variance directions are represented exactly by missing or
//! zero columns. Propagation and conditioning only ever triangularize stacked
//! factors with a QR decomposition, so covariances never get squared up.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{ensure_dim, Error, Result};

/// Diagonal pivots of a normalized innovation factor below this are treated as
/// zero-variance directions.
const PIVOT_TOL: f64 = 1e-11;
/// Residuals in zero-variance directions must vanish to this relative accuracy.
const CONSISTENCY_TOL: f64 = 1e-8;
/// Rows whose predicted standard deviation falls below this fraction of the
/// largest standard deviation they could see carry no information in double
/// precision; their variance is round-off.
pub(crate) const NEGLIGIBLE_STD: f64 = 1e-13;

/// Lower-triangular factor `L` with `L Lᵀ = M Mᵀ`, of shape `rows × min(rows, cols)`.
pub(crate) fn triangularize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return DMatrix::zeros(rows, 0);
    }
    m.transpose().qr().r().transpose()
}

fn pad_columns(m: DMatrix<f64>, cols: usize) -> DMatrix<f64> {
    if m.ncols() >= cols {
        return m;
    }
    let rows = m.nrows();
    let mut out = DMatrix::zeros(rows, cols);
    out.view_mut((0, 0), (rows, m.ncols())).copy_from(&m);
    out
}

/// An affine map `x ↦ A x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineMap {
    pub matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl AffineMap {
    pub fn new(matrix: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        ensure_dim("affine map offset", matrix.nrows(), offset.len())?;
        Ok(Self { matrix, offset })
    }

    pub fn linear(matrix: DMatrix<f64>) -> Self {
        let offset = DVector::zeros(matrix.nrows());
        Self { matrix, offset }
    }

    pub fn identity(dim: usize) -> Self {
        Self::linear(DMatrix::identity(dim, dim))
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x + &self.offset
    }
}

/// Measurement residual and the square root of its covariance.
///
/// For updates that had to drop zero-variance directions the pair is expressed
/// in rotated coordinates; `zᵀ S⁻¹ z` is invariant under that change.
#[derive(Clone, Debug, PartialEq)]
pub struct Innovation {
    pub residual: DVector<f64>,
    pub cov_sqrt: DMatrix<f64>,
}

impl Innovation {
    pub fn new(residual: DVector<f64>, cov_sqrt: DMatrix<f64>) -> Result<Self> {
        ensure_dim("innovation factor rows", residual.len(), cov_sqrt.nrows())?;
        ensure_dim("innovation factor cols", residual.len(), cov_sqrt.ncols())?;
        Ok(Self { residual, cov_sqrt })
    }

    pub fn empty() -> Self {
        Self {
            residual: DVector::zeros(0),
            cov_sqrt: DMatrix::zeros(0, 0),
        }
    }

    pub fn dim(&self) -> usize {
        self.residual.len()
    }

    /// The whitened residual `S⁻¹ᐟ² z` (forward substitution with the factor).
    pub fn whitened(&self) -> Result<DVector<f64>> {
        if self.dim() == 0 {
            return Ok(DVector::zeros(0));
        }
        let factor = triangularize(&self.cov_sqrt);
        let factor = pad_columns(factor, self.dim());
        for i in 0..self.dim() {
            if factor[(i, i)] == 0.0 || !factor[(i, i)].is_finite() {
                return Err(Error::SingularCovariance(format!(
                    "innovation covariance is singular in component {i}"
                )));
            }
        }
        factor
            .solve_lower_triangular(&self.residual)
            .ok_or_else(|| Error::SingularCovariance("innovation covariance".into()))
    }

    /// `zᵀ S⁻¹ z`.
    pub fn mahalanobis_sq(&self) -> Result<f64> {
        Ok(self.whitened()?.norm_squared())
    }

    pub(crate) fn scaled(&self, factor: f64) -> Self {
        Self {
            residual: self.residual.clone(),
            cov_sqrt: &self.cov_sqrt * factor,
        }
    }
}

/// A Gaussian `N(mean, S Sᵀ)` held by its square-root factor `S`.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian {
    mean: DVector<f64>,
    cov_sqrt: DMatrix<f64>,
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, cov_sqrt: DMatrix<f64>) -> Result<Self> {
        ensure_dim("gaussian factor rows", mean.len(), cov_sqrt.nrows())?;
        Ok(Self { mean, cov_sqrt })
    }

    /// Builds a Gaussian from a dense covariance via its eigendecomposition.
    /// Small negative eigenvalues from round-off are clipped.
    pub fn from_cov(mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        ensure_dim("gaussian covariance rows", mean.len(), cov.nrows())?;
        ensure_dim("gaussian covariance cols", mean.len(), cov.ncols())?;
        let sym = 0.5 * (cov + cov.transpose());
        let eig = SymmetricEigen::new(sym);
        let mut factor = eig.eigenvectors.clone();
        for (j, lambda) in eig.eigenvalues.iter().enumerate() {
            let s = lambda.max(0.0).sqrt();
            factor.column_mut(j).scale_mut(s);
        }
        Ok(Self {
            mean,
            cov_sqrt: triangularize(&factor),
        })
    }

    pub fn dirac(mean: DVector<f64>) -> Self {
        let k = mean.len();
        Self {
            mean,
            cov_sqrt: DMatrix::zeros(k, 0),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov_sqrt(&self) -> &DMatrix<f64> {
        &self.cov_sqrt
    }

    pub fn cov(&self) -> DMatrix<f64> {
        &self.cov_sqrt * self.cov_sqrt.transpose()
    }

    /// Marginal standard deviations (row norms of the factor).
    pub fn std_devs(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            (0..self.dim()).map(|i| self.cov_sqrt.row(i).norm()),
        )
    }

    pub(crate) fn into_parts(self) -> (DVector<f64>, DMatrix<f64>) {
        (self.mean, self.cov_sqrt)
    }

    /// Multiplies the covariance by `factor ≥ 0`.
    pub fn scale_cov(&self, factor: f64) -> Self {
        Self {
            mean: self.mean.clone(),
            cov_sqrt: &self.cov_sqrt * factor.sqrt(),
        }
    }

    pub fn with_mean(&self, mean: DVector<f64>) -> Result<Self> {
        Self::new(mean, self.cov_sqrt.clone())
    }

    /// Pushforward through an affine map: `N(A m + b, A C Aᵀ)`.
    pub fn marginal(&self, map: &AffineMap) -> Result<Gaussian> {
        ensure_dim("marginal map columns", self.dim(), map.cols())?;
        Ok(Gaussian {
            mean: map.apply(&self.mean),
            cov_sqrt: triangularize(&(&map.matrix * &self.cov_sqrt)),
        })
    }

    /// Conditions on `A x + b + η = data` with `η ~ N(0, N Nᵀ)`.
    ///
    /// A zero `noise_sqrt` yields a noise-free (Dirac) update. Directions in
    /// which the predicted observation has no variance are dropped when the
    /// data agree with the prediction and rejected otherwise.
    pub fn condition(
        &self,
        obs: &AffineMap,
        data: &DVector<f64>,
        noise_sqrt: &DMatrix<f64>,
    ) -> Result<(Gaussian, Innovation)> {
        ensure_dim("observation noise rows", obs.rows(), noise_sqrt.nrows())?;
        let noise = if noise_sqrt.iter().all(|v| *v == 0.0) {
            None
        } else {
            Some(noise_sqrt)
        };
        let upd = update(self, obs, data, noise, Some(NEGLIGIBLE_STD))?;
        Ok((upd.posterior, upd.innovation))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let u = DVector::from_iterator(
            self.cov_sqrt.ncols(),
            (0..self.cov_sqrt.ncols()).map(|_| rng.sample::<f64, _>(StandardNormal)),
        );
        &self.mean + &self.cov_sqrt * u
    }

    /// Draws one sample from a generator seeded with `seed`.
    pub fn sample_seeded(&self, seed: u64) -> DVector<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample(&mut rng)
    }

    pub fn logpdf(&self, x: &DVector<f64>) -> Result<f64> {
        ensure_dim("logpdf argument", self.dim(), x.len())?;
        let k = self.dim();
        let factor = pad_columns(triangularize(&self.cov_sqrt), k);
        let scale = factor.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let mut log_det = 0.0;
        for i in 0..k {
            let d = factor[(i, i)].abs();
            if d <= f64::EPSILON * scale || d == 0.0 {
                return Err(Error::SingularCovariance(
                    "logpdf needs a nondegenerate covariance".into(),
                ));
            }
            log_det += d.ln();
        }
        let w = factor
            .solve_lower_triangular(&(x - &self.mean))
            .ok_or_else(|| Error::SingularCovariance("logpdf".into()))?;
        Ok(-0.5 * w.norm_squared() - log_det - 0.5 * k as f64 * (2.0 * std::f64::consts::PI).ln())
    }
}

/// A Gaussian conditional `x' | x ~ N(G x + c, N Nᵀ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineConditional {
    pub map: AffineMap,
    pub noise_sqrt: DMatrix<f64>,
}

impl AffineConditional {
    pub fn new(map: AffineMap, noise_sqrt: DMatrix<f64>) -> Result<Self> {
        ensure_dim("conditional noise rows", map.rows(), noise_sqrt.nrows())?;
        Ok(Self { map, noise_sqrt })
    }

    /// Output covariance gets multiplied by `factor`.
    pub(crate) fn scale_noise(&self, factor: f64) -> Self {
        Self {
            map: self.map.clone(),
            noise_sqrt: &self.noise_sqrt * factor.sqrt(),
        }
    }

    /// Integrates the conditional against `x ~ belief`.
    ///
    /// `scale` is an optional diagonal preconditioner `D` for the output
    /// coordinates: the factor is triangularized in `D⁻¹`-scaled rows.
    pub fn marginalize(&self, belief: &Gaussian, scale: Option<&DVector<f64>>) -> Result<Gaussian> {
        ensure_dim("conditional input", self.map.cols(), belief.dim())?;
        let mean = self.map.apply(belief.mean());
        let gs = &self.map.matrix * belief.cov_sqrt();
        let mut pre = DMatrix::zeros(self.map.rows(), gs.ncols() + self.noise_sqrt.ncols());
        pre.view_mut((0, 0), gs.shape()).copy_from(&gs);
        pre.view_mut((0, gs.ncols()), self.noise_sqrt.shape())
            .copy_from(&self.noise_sqrt);
        let cov_sqrt = match scale {
            Some(d) => {
                scale_rows_inv(&mut pre, d);
                let mut l = triangularize(&pre);
                scale_rows(&mut l, d);
                l
            }
            None => triangularize(&pre),
        };
        Ok(Gaussian { mean, cov_sqrt })
    }

    /// Reverses the conditional against `x ~ belief`: returns
    /// `x | x' ~ N(G_b x' + c_b, ...)`.
    pub fn backward(&self, belief: &Gaussian, scale: Option<&DVector<f64>>) -> Result<AffineConditional> {
        ensure_dim("conditional input", self.map.cols(), belief.dim())?;
        let k_out = self.map.rows();
        let k_in = belief.dim();
        let sf = belief.cov_sqrt();
        let gs = &self.map.matrix * sf;
        let cols = sf.ncols() + self.noise_sqrt.ncols();
        let mut pre = DMatrix::zeros(k_out + k_in, cols);
        pre.view_mut((0, 0), gs.shape()).copy_from(&gs);
        pre.view_mut((0, sf.ncols()), self.noise_sqrt.shape())
            .copy_from(&self.noise_sqrt);
        pre.view_mut((k_out, 0), sf.shape()).copy_from(sf);
        if let Some(d) = scale {
            let mut top = pre.rows_mut(0, k_out).into_owned();
            scale_rows_inv(&mut top, d);
            pre.rows_mut(0, k_out).copy_from(&top);
        }
        let l = pad_columns(triangularize(&pre), k_out);
        let pred = l.view((0, 0), (k_out, k_out)).into_owned();
        let cross = l.view((k_out, 0), (k_in, k_out)).into_owned();
        let rest = l.columns(k_out, l.ncols() - k_out);
        let mut noise = rest.rows(k_out, k_in).into_owned();

        // gain = cross · pred⁺ · D⁻¹
        let (mut gain, leftover) = right_pseudo_solve(&cross, &pred);
        if let Some(extra) = leftover {
            let mut both = DMatrix::zeros(k_in, noise.ncols() + extra.ncols());
            both.view_mut((0, 0), noise.shape()).copy_from(&noise);
            both.view_mut((0, noise.ncols()), extra.shape()).copy_from(&extra);
            noise = triangularize(&both);
        }
        if let Some(d) = scale {
            for j in 0..gain.ncols() {
                let s = d[j];
                gain.column_mut(j).unscale_mut(s);
            }
        }
        let predicted_mean = self.map.apply(belief.mean());
        let offset = belief.mean() - &gain * predicted_mean;
        Ok(AffineConditional {
            map: AffineMap {
                matrix: gain,
                offset,
            },
            noise_sqrt: noise,
        })
    }
}

/// `X · L⁺` for a lower-triangular `L`, falling back to a pseudo-inverse when
/// `L` has (numerically) zero pivots. In that case the part of `X` outside the
/// row space of `L`, `X (I − L⁺ L)`, is returned as well.
///
/// A pivot is compared with the norm of its own row, so factors whose rows
/// live on very different scales (short steps under the preconditioner) are
/// not mistaken for singular ones.
fn right_pseudo_solve(x: &DMatrix<f64>, l: &DMatrix<f64>) -> (DMatrix<f64>, Option<DMatrix<f64>>) {
    let n = l.nrows();
    let healthy = (0..n).all(|i| {
        let norm = l.row(i).amax();
        norm > 0.0 && l[(i, i)].abs() > 1e-13 * norm
    });
    if healthy {
        if let Some(t) = l.transpose().solve_upper_triangular(&x.transpose()) {
            if t.iter().all(|v| v.is_finite()) {
                return (t.transpose(), None);
            }
        }
    }
    let scale = l.amax();
    if scale == 0.0 {
        return (DMatrix::zeros(x.nrows(), n), Some(x.clone()));
    }
    let svd = SVD::new(l.clone(), true, true);
    let pinv = svd
        .pseudo_inverse(1e-12 * scale)
        .unwrap_or_else(|_| DMatrix::zeros(n, n));
    let gain = x * &pinv;
    let leftover = x - &gain * l;
    (gain, Some(leftover))
}

pub(crate) fn scale_rows(m: &mut DMatrix<f64>, d: &DVector<f64>) {
    for (i, mut row) in m.row_iter_mut().enumerate() {
        row.scale_mut(d[i]);
    }
}

pub(crate) fn scale_rows_inv(m: &mut DMatrix<f64>, d: &DVector<f64>) {
    for (i, mut row) in m.row_iter_mut().enumerate() {
        row.unscale_mut(d[i]);
    }
}

/// Output of a square-root measurement update.
#[derive(Clone, Debug)]
pub(crate) struct Update {
    pub posterior: Gaussian,
    pub innovation: Innovation,
    /// Kalman gain mapping the raw data residual to the mean correction.
    pub gain: DMatrix<f64>,
}

struct JointFactor {
    innov: DMatrix<f64>,
    cross: DMatrix<f64>,
    post: DMatrix<f64>,
}

fn joint_factor(a: &DMatrix<f64>, noise: Option<&DMatrix<f64>>, s: &DMatrix<f64>) -> JointFactor {
    let r = a.nrows();
    let k = s.nrows();
    let nc = noise.map_or(0, |n| n.ncols());
    let as_ = a * s;
    let mut pre = DMatrix::zeros(r + k, nc + s.ncols());
    if let Some(n) = noise {
        pre.view_mut((0, 0), n.shape()).copy_from(n);
    }
    pre.view_mut((0, nc), as_.shape()).copy_from(&as_);
    pre.view_mut((r, nc), s.shape()).copy_from(s);
    let l = pad_columns(triangularize(&pre), r);
    JointFactor {
        innov: l.view((0, 0), (r, r)).into_owned(),
        cross: l.view((r, 0), (k, r)).into_owned(),
        post: l.view((r, r), (k, l.ncols() - r)).into_owned(),
    }
}

/// Square-root conditioning on `A x + b + η = data`.
///
/// Observation rows are normalized by a cancellation-free bound on their
/// predicted standard deviation before triangularization; this leaves
/// `zᵀ S⁻¹ z` unchanged. `negligible_std`, if set, treats rows whose bound is
/// that small relative to `Σ_j |A_ij| max_l ‖S_l‖ + ‖N_i‖` as carrying no
/// information.
pub(crate) fn update(
    prior: &Gaussian,
    obs: &AffineMap,
    data: &DVector<f64>,
    noise: Option<&DMatrix<f64>>,
    negligible_std: Option<f64>,
) -> Result<Update> {
    let k = prior.dim();
    let r = obs.rows();
    ensure_dim("observation columns", k, obs.cols())?;
    ensure_dim("observation data", r, data.len())?;
    if let Some(n) = noise {
        ensure_dim("observation noise rows", r, n.nrows())?;
    }
    let s = prior.cov_sqrt();
    let pred = obs.apply(prior.mean());
    let z = data - &pred;

    let row_norms: Vec<f64> = (0..k).map(|j| s.row(j).norm()).collect();
    let largest = row_norms.iter().cloned().fold(0.0, f64::max);
    let mut active = Vec::with_capacity(r);
    let mut bounds = Vec::with_capacity(r);
    for i in 0..r {
        let mut bound: f64 = (0..k).map(|j| obs.matrix[(i, j)].abs() * row_norms[j]).sum();
        let mut reach: f64 = obs.matrix.row(i).iter().map(|a| a.abs()).sum::<f64>() * largest;
        if let Some(n) = noise {
            let nn = n.row(i).norm();
            bound += nn;
            reach += nn;
        }
        let magnitude = 1.0 + data[i].abs() + pred[i].abs();
        let negligible = bound == 0.0 || negligible_std.is_some_and(|tol| bound <= tol * reach);
        if negligible {
            if !(z[i].abs() <= CONSISTENCY_TOL * magnitude) {
                return Err(Error::RankDeficient {
                    context: format!(
                        "observation has no variance but residual {:.3e} is nonzero",
                        z[i]
                    ),
                    row: i,
                });
            }
        } else {
            active.push(i);
            bounds.push(bound);
        }
    }
    if active.is_empty() {
        return Ok(Update {
            posterior: prior.clone(),
            innovation: Innovation::empty(),
            gain: DMatrix::zeros(k, r),
        });
    }

    let ra = active.len();
    // weights: data-space residual -> normalized active residual
    let mut weights = DMatrix::zeros(ra, r);
    for (a, &i) in active.iter().enumerate() {
        weights[(a, i)] = 1.0 / bounds[a];
    }
    let mut a_n = &weights * &obs.matrix;
    let mut n_n = noise.map(|n| &weights * n);
    let mut z_n = &weights * &z;
    let mut factor = joint_factor(&a_n, n_n.as_ref(), s);
    let mut rotated = false;

    let min_pivot = (0..ra)
        .map(|i| factor.innov[(i, i)].abs())
        .fold(f64::INFINITY, f64::min);
    if !(min_pivot > PIVOT_TOL) {
        let svd = SVD::new(factor.innov.clone(), true, false);
        let u = svd.u.as_ref().expect("left singular vectors requested");
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&j| svd.singular_values[j] > PIVOT_TOL)
            .collect();
        let z_scale = 1.0 + z_n.amax();
        for j in 0..svd.singular_values.len() {
            if keep.contains(&j) {
                continue;
            }
            let dir = u.column(j);
            let component = dir.dot(&z_n);
            if !(component.abs() <= CONSISTENCY_TOL * z_scale) {
                let row = active[dir.iamax()];
                return Err(Error::RankDeficient {
                    context: format!(
                        "redundant noise-free observation with inconsistent residual {:.3e}",
                        component
                    ),
                    row,
                });
            }
        }
        if keep.is_empty() {
            return Ok(Update {
                posterior: prior.clone(),
                innovation: Innovation::empty(),
                gain: DMatrix::zeros(k, r),
            });
        }
        let mut proj = DMatrix::zeros(keep.len(), ra);
        for (row, &j) in keep.iter().enumerate() {
            proj.row_mut(row).copy_from(&u.column(j).transpose());
        }
        a_n = &proj * a_n;
        n_n = n_n.map(|n| &proj * n);
        z_n = &proj * z_n;
        weights = &proj * weights;
        factor = joint_factor(&a_n, n_n.as_ref(), s);
        rotated = true;
        let min_pivot = (0..keep.len())
            .map(|i| factor.innov[(i, i)].abs())
            .fold(f64::INFINITY, f64::min);
        if !(min_pivot > 0.1 * PIVOT_TOL) {
            return Err(Error::RankDeficient {
                context: "innovation covariance remains singular after projection".into(),
                row: active[0],
            });
        }
    }

    let w = factor
        .innov
        .solve_lower_triangular(&z_n)
        .ok_or_else(|| Error::SingularCovariance("innovation factor".into()))?;
    let mean = prior.mean() + &factor.cross * &w;
    let gain_n = factor
        .innov
        .transpose()
        .solve_upper_triangular(&factor.cross.transpose())
        .ok_or_else(|| Error::SingularCovariance("innovation factor".into()))?
        .transpose();
    let gain = gain_n * &weights;

    let innovation = if rotated {
        Innovation {
            residual: z_n,
            cov_sqrt: factor.innov,
        }
    } else {
        let mut cov_sqrt = factor.innov;
        let b = DVector::from_vec(bounds);
        scale_rows(&mut cov_sqrt, &b);
        Innovation {
            residual: DVector::from_iterator(ra, active.iter().map(|&i| z[i])),
            cov_sqrt,
        }
    };

    Ok(Update {
        posterior: Gaussian {
            mean,
            cov_sqrt: factor.post,
        },
        innovation,
        gain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn assert_close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) {
        assert_eq!(a.shape(), b.shape());
        let diff = (a - b).amax();
        assert!(diff <= tol, "max diff {diff:e} > {tol:e}\n{a}\n{b}");
    }

    #[test]
    fn identity_marginal_is_noop() {
        let g = Gaussian::new(dvector![1.0, 2.0], DMatrix::identity(2, 2)).unwrap();
        let out = g.marginal(&AffineMap::identity(2)).unwrap();
        assert_eq!(out.mean(), &dvector![1.0, 2.0]);
        assert_close(&out.cov(), &DMatrix::identity(2, 2), 1e-15);
    }

    #[test]
    fn sum_map_adds_variances() {
        let g = Gaussian::new(dvector![0.0, 0.0], DMatrix::identity(2, 2)).unwrap();
        let map = AffineMap::new(dmatrix![1.0, 1.0], dvector![0.0]).unwrap();
        let out = g.marginal(&map).unwrap();
        assert_eq!(out.mean()[0], 0.0);
        assert!((out.cov()[(0, 0)] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn constant_map_is_dirac() {
        let g = Gaussian::new(dvector![3.0], dmatrix![2.0]).unwrap();
        let map = AffineMap::new(dmatrix![0.0], dvector![5.0]).unwrap();
        let out = g.marginal(&map).unwrap();
        assert_eq!(out.mean()[0], 5.0);
        assert_eq!(out.cov()[(0, 0)], 0.0);
    }

    #[test]
    fn marginal_rejects_bad_dims() {
        let g = Gaussian::new(dvector![0.0, 0.0], DMatrix::identity(2, 2)).unwrap();
        let map = AffineMap::identity(3);
        assert!(matches!(
            g.marginal(&map),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn dirac_condition_on_first_coordinate() {
        let g = Gaussian::new(dvector![0.0, 0.0], DMatrix::identity(2, 2)).unwrap();
        let obs = AffineMap::linear(dmatrix![1.0, 0.0]);
        let (post, innov) = g
            .condition(&obs, &dvector![1.0], &DMatrix::zeros(1, 1))
            .unwrap();
        assert!((post.mean() - dvector![1.0, 0.0]).amax() < 1e-15);
        assert_close(&post.cov(), &dmatrix![0.0, 0.0; 0.0, 1.0], 1e-15);
        assert_eq!(innov.residual, dvector![1.0]);
        assert!(((&innov.cov_sqrt * innov.cov_sqrt.transpose())[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn scalar_noisy_condition_halves_variance() {
        let g = Gaussian::new(dvector![0.0], dmatrix![1.0]).unwrap();
        let obs = AffineMap::linear(dmatrix![1.0]);
        let (post, _) = g.condition(&obs, &dvector![0.0], &dmatrix![1.0]).unwrap();
        assert!(post.mean()[0].abs() < 1e-15);
        assert!((post.cov()[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn dirac_prior_is_unchanged_by_consistent_data() {
        let g = Gaussian::dirac(dvector![2.0]);
        let obs = AffineMap::new(dmatrix![3.0], dvector![1.0]).unwrap();
        let (post, innov) = g.condition(&obs, &dvector![7.0], &dmatrix![0.0]).unwrap();
        assert_eq!(post, g);
        assert_eq!(innov.dim(), 0);
    }

    #[test]
    fn redundant_inconsistent_observation_is_rejected() {
        let g = Gaussian::new(dvector![0.0, 0.0], dmatrix![1.0; 0.0]).unwrap();
        let obs = AffineMap::linear(dmatrix![1.0, 0.0; 2.0, 0.0]);
        let err = g
            .condition(&obs, &dvector![1.0, 5.0], &DMatrix::zeros(2, 2))
            .unwrap_err();
        assert!(matches!(err, Error::RankDeficient { .. }), "{err}");
        // consistent duplicate observations are fine
        let (post, innov) = g
            .condition(&obs, &dvector![1.0, 2.0], &DMatrix::zeros(2, 2))
            .unwrap();
        assert!((post.mean()[0] - 1.0).abs() < 1e-12);
        assert_eq!(innov.dim(), 1);
    }

    #[test]
    fn dirac_sample_is_the_mean() {
        let g = Gaussian::new(dvector![1.5, -2.0], DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(g.sample_seeded(7), dvector![1.5, -2.0]);
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let g = Gaussian::new(dvector![0.0, 1.0], dmatrix![1.0, 0.0; 0.5, 2.0]).unwrap();
        assert_eq!(g.sample_seeded(42), g.sample_seeded(42));
        assert_ne!(g.sample_seeded(42), g.sample_seeded(43));
    }

    #[test]
    fn monte_carlo_mean_of_standard_normal() {
        let g = Gaussian::new(dvector![0.0], dmatrix![1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| g.sample(&mut rng)[0]).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "{mean}");
    }

    #[test]
    fn logpdf_values() {
        let g = Gaussian::new(dvector![0.0], dmatrix![1.0]).unwrap();
        let two_pi = 2.0 * std::f64::consts::PI;
        assert!((g.logpdf(&dvector![0.0]).unwrap() + 0.5 * two_pi.ln()).abs() < 1e-15);
        let g4 = Gaussian::new(dvector![0.0], dmatrix![2.0]).unwrap();
        let expected = -0.5 * (8.0 * std::f64::consts::PI).ln() - 0.5;
        assert!((g4.logpdf(&dvector![2.0]).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn logpdf_peaks_at_mean() {
        let g = Gaussian::new(dvector![1.0, -1.0], dmatrix![1.0, 0.0; 0.3, 0.7]).unwrap();
        let at_mode = g.logpdf(g.mean()).unwrap();
        for dx in [dvector![0.1, 0.0], dvector![0.0, -0.2], dvector![0.05, 0.05]] {
            assert!(g.logpdf(&(g.mean() + dx)).unwrap() < at_mode);
        }
    }

    #[test]
    fn logpdf_rejects_singular() {
        let g = Gaussian::new(dvector![0.0, 0.0], dmatrix![1.0; 1.0]).unwrap();
        assert!(g.logpdf(&dvector![0.0, 0.0]).is_err());
    }

    #[test]
    fn triangularize_handles_wide_and_tall() {
        let wide = dmatrix![1.0, 2.0, 3.0; 4.0, 5.0, 6.0];
        let l = triangularize(&wide);
        assert_eq!(l.shape(), (2, 2));
        assert_close(&(&l * l.transpose()), &(&wide * wide.transpose()), 1e-12);
        let tall = wide.transpose();
        let l = triangularize(&tall);
        assert_eq!(l.shape(), (3, 2));
        assert_close(&(&l * l.transpose()), &(&tall * tall.transpose()), 1e-12);
    }

    #[test]
    fn backward_conditional_recovers_joint() {
        let belief = Gaussian::new(dvector![0.3, -0.2], dmatrix![1.0, 0.0; 0.4, 0.8]).unwrap();
        let cond = AffineConditional::new(
            AffineMap::new(dmatrix![1.0, 0.5; 0.0, 1.0], dvector![0.1, 0.0]).unwrap(),
            dmatrix![0.2, 0.0; 0.1, 0.3],
        )
        .unwrap();
        let back = cond.backward(&belief, None).unwrap();
        // dense oracle: Cov(x, x') P⁻¹
        let c = belief.cov();
        let g = &cond.map.matrix;
        let p = g * &c * g.transpose() + &cond.noise_sqrt * cond.noise_sqrt.transpose();
        let cross = &c * g.transpose();
        let gain = &cross * p.clone().try_inverse().unwrap();
        assert_close(&back.map.matrix, &gain, 1e-12);
        let post = &c - &gain * p * gain.transpose();
        assert_close(&(&back.noise_sqrt * back.noise_sqrt.transpose()), &post, 1e-12);
    }
}
