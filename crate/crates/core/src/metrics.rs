//! Accuracy and calibration metrics against a reference solution.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{ensure_dim, Error, Result};
use crate::gaussian::Gaussian;
use crate::inference::Posterior;

/// Points of the uniform evaluation grid.
pub const EVAL_POINTS: usize = 257;

/// `n` uniform points on `[t0, tmax]`, endpoints included and exact.
pub fn evaluation_grid(t0: f64, tmax: f64, n: usize) -> Vec<f64> {
    let mut grid: Vec<f64> = (0..n)
        .map(|i| t0 + (tmax - t0) * i as f64 / (n - 1) as f64)
        .collect();
    grid[n - 1] = tmax;
    grid
}

/// Marginal of the solution value `Y₀(t)` (length `d`).
pub fn solution_marginal(posterior: &Posterior, t: f64) -> Result<Gaussian> {
    let g = posterior.interpolate(t)?;
    let prior = posterior.prior();
    let rows: Vec<usize> = (0..prior.dim()).map(|c| prior.index(c, 0)).collect();
    let mean = DVector::from_iterator(rows.len(), rows.iter().map(|&i| g.mean()[i]));
    let s = g.cov_sqrt().select_rows(rows.iter());
    Gaussian::new(mean, s)
}

/// `sqrt(mean over points and components of (m(t) − y*(t))²)`.
pub fn rmse_from(means: &[DVector<f64>], truths: &[DVector<f64>]) -> Result<f64> {
    ensure_dim("rmse points", means.len(), truths.len())?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (m, y) in means.iter().zip(truths) {
        ensure_dim("rmse components", m.len(), y.len())?;
        sum += (m - y).norm_squared();
        count += m.len();
    }
    if count == 0 {
        return Err(Error::InvalidArgument("rmse of an empty grid".into()));
    }
    Ok((sum / count as f64).sqrt())
}

/// Mean of `(y* − m)ᵀ C⁻¹ (y* − m) / d` over points whose covariance `C` is
/// nonsingular; singular points are skipped.
pub fn anees_from(marginals: &[Gaussian], truths: &[DVector<f64>]) -> Result<f64> {
    ensure_dim("anees points", marginals.len(), truths.len())?;
    let mut sum = 0.0;
    let mut used = 0usize;
    for (g, y) in marginals.iter().zip(truths) {
        ensure_dim("anees components", g.dim(), y.len())?;
        let cov: DMatrix<f64> = g.cov();
        let scale = cov.diagonal().amax();
        if !(scale > 0.0) {
            continue;
        }
        // relative pivot check guards against round-off rank
        let Some(chol) = cov.clone().cholesky() else { continue };
        if chol.l().diagonal().iter().any(|&l| l * l <= 1e-14 * scale) {
            continue;
        }
        let r = y - g.mean();
        sum += r.dot(&chol.solve(&r)) / y.len() as f64;
        used += 1;
    }
    if used == 0 {
        return Err(Error::SingularCovariance(
            "every evaluation point has a singular covariance".into(),
        ));
    }
    Ok(sum / used as f64)
}

/// Number of evaluation points [`anees_from`] would use.
pub fn anees_points(marginals: &[Gaussian]) -> usize {
    marginals
        .iter()
        .filter(|g| {
            let cov = g.cov();
            let scale = cov.diagonal().amax();
            scale > 0.0
                && cov
                    .cholesky()
                    .is_some_and(|c| c.l().diagonal().iter().all(|&l| l * l > 1e-14 * scale))
        })
        .count()
}

/// RMSE and ANEES of a posterior against a reference on a grid. The ANEES
/// leaves out the two endpoints of the domain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scores {
    pub rmse: f64,
    pub anees: f64,
    /// Points entering the ANEES.
    pub anees_points: usize,
}

pub fn score(
    posterior: &Posterior,
    reference: impl Fn(f64) -> Result<DVector<f64>>,
    grid: &[f64],
) -> Result<Scores> {
    let mut marginals = Vec::with_capacity(grid.len());
    let mut truths = Vec::with_capacity(grid.len());
    for &t in grid {
        marginals.push(solution_marginal(posterior, t)?);
        truths.push(reference(t)?);
    }
    let means: Vec<DVector<f64>> = marginals.iter().map(|g| g.mean().clone()).collect();
    let rmse = rmse_from(&means, &truths)?;
    let (t0, tmax) = (posterior.mesh()[0], *posterior.mesh().last().expect("nonempty mesh"));
    let interior: Vec<usize> = (0..grid.len()).filter(|&i| grid[i] != t0 && grid[i] != tmax).collect();
    let inner_m: Vec<Gaussian> = interior.iter().map(|&i| marginals[i].clone()).collect();
    let inner_t: Vec<DVector<f64>> = interior.iter().map(|&i| truths[i].clone()).collect();
    let anees = anees_from(&inner_m, &inner_t)?;
    Ok(Scores {
        rmse,
        anees,
        anees_points: anees_points(&inner_m),
    })
}

pub fn rmse(
    posterior: &Posterior,
    reference: impl Fn(f64) -> Result<DVector<f64>>,
    grid: &[f64],
) -> Result<f64> {
    let mut means = Vec::with_capacity(grid.len());
    let mut truths = Vec::with_capacity(grid.len());
    for &t in grid {
        means.push(solution_marginal(posterior, t)?.mean().clone());
        truths.push(reference(t)?);
    }
    rmse_from(&means, &truths)
}

pub fn anees(
    posterior: &Posterior,
    reference: impl Fn(f64) -> Result<DVector<f64>>,
    grid: &[f64],
) -> Result<f64> {
    Ok(score(posterior, reference, grid)?.anees)
}

/// Central `level` band of the ANEES of `points` independent `d`-variate
/// consistent errors: the `χ²(points·d)` quantiles divided by `points·d`.
pub fn chi_square_band(points: usize, dim: usize, level: f64) -> Result<(f64, f64)> {
    let dof = (points * dim) as f64;
    if dof == 0.0 || !(0.0 < level && level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "chi-square band needs dof > 0 and level in (0, 1), got dof = {dof}, level = {level}"
        )));
    }
    let chi = ChiSquared::new(dof).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let tail = (1.0 - level) / 2.0;
    Ok((chi.inverse_cdf(tail) / dof, chi.inverse_cdf(1.0 - tail) / dof))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};
    use rand::SeedableRng;

    #[test]
    fn grid_has_exact_endpoints() {
        let g = evaluation_grid(-1.0, 1.0, EVAL_POINTS);
        assert_eq!(g.len(), 257);
        assert_eq!((g[0], g[128], g[256]), (-1.0, 0.0, 1.0));
    }

    #[test]
    fn exact_mean_scores_zero() {
        let gs: Vec<Gaussian> = (0..5).map(|i| Gaussian::new(dvector![i as f64], dmatrix![0.3]).unwrap()).collect();
        let ys: Vec<DVector<f64>> = gs.iter().map(|g| g.mean().clone()).collect();
        let ms = ys.clone();
        assert_eq!(rmse_from(&ms, &ys).unwrap(), 0.0);
        assert_eq!(anees_from(&gs, &ys).unwrap(), 0.0);
    }

    #[test]
    fn rmse_value() {
        let ms = vec![dvector![1.0, 0.0], dvector![0.0, 0.0]];
        let ys = vec![dvector![0.0, 0.0], dvector![0.0, 2.0]];
        assert!((rmse_from(&ms, &ys).unwrap() - (5.0f64 / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn samples_from_the_marginals_are_calibrated() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let gs: Vec<Gaussian> = (0..255)
            .map(|i| Gaussian::new(dvector![(i as f64).sin()], dmatrix![0.1 + i as f64 / 300.0]).unwrap())
            .collect();
        let ys: Vec<DVector<f64>> = gs.iter().map(|g| g.sample(&mut rng)).collect();
        let a = anees_from(&gs, &ys).unwrap();
        assert!((0.8..=1.2).contains(&a), "{a}");
    }

    #[test]
    fn inflating_spread_divides_anees() {
        let gs: Vec<Gaussian> = (0..4).map(|i| Gaussian::new(dvector![0.0], dmatrix![1.0 + i as f64]).unwrap()).collect();
        let wide: Vec<Gaussian> = gs.iter().map(|g| g.scale_cov(100.0)).collect();
        let ys = vec![dvector![0.5], dvector![-1.0], dvector![2.0], dvector![0.1]];
        let (a, b) = (anees_from(&gs, &ys).unwrap(), anees_from(&wide, &ys).unwrap());
        assert!((a / b - 100.0).abs() < 1e-10);
    }

    #[test]
    fn singular_points_are_skipped() {
        let gs = vec![Gaussian::dirac(dvector![0.0]), Gaussian::new(dvector![0.0], dmatrix![2.0]).unwrap()];
        let ys = vec![dvector![1.0], dvector![2.0]];
        assert_eq!(anees_from(&gs, &ys).unwrap(), 1.0);
        assert_eq!(anees_points(&gs), 1);
        assert!(anees_from(&gs[..1], &ys[..1]).is_err());
    }

    #[test]
    fn band_brackets_one() {
        let (lo, hi) = chi_square_band(255, 1, 0.99).unwrap();
        assert!(lo < 1.0 && 1.0 < hi);
        let (lo95, hi95) = chi_square_band(255, 1, 0.95).unwrap();
        assert!(lo < lo95 && hi95 < hi);
        // normal approximation 1 ± z sqrt(2/k)
        let approx = 2.5758 * (2.0f64 / 255.0).sqrt();
        assert!((hi - 1.0 - approx).abs() < 0.02 && (1.0 - lo - approx).abs() < 0.02);
    }
}
