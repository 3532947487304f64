//! Extended Kalman smoothing for boundary value problems.
//!
//! One forward pass conditions the prior (or its bridge) on the boundary
//! conditions and on the linearized ODE at every mesh node; a backward pass
//! turns the filtering beliefs into smoothing marginals. Repeating the pass
//! with all linearizations taken at the previous smoothing means is
//! Gauss–Newton on the MAP objective (the iterated smoother).

use nalgebra::{DMatrix, DVector, SVD};

use crate::bridge::{self, BoundaryConditions};
use crate::calibration;
use crate::error::{ensure_dim, Error, Result};
use crate::gaussian::{self, AffineConditional, AffineMap, Gaussian, Innovation};
use crate::information::{self, BvProblem, LinearizedObservation};
use crate::prior::IwpPrior;

/// How the first pass on a mesh is linearized.
#[derive(Clone, Debug, PartialEq)]
pub enum InitStrategy {
    /// Bridge prior, ODE linearized at the predictive means on the fly.
    Bridge,
    /// Plain prior with boundary updates at the end nodes, linearized on the fly.
    Conventional,
    /// One state vector per node; the pass is linearized at these states and
    /// the returned means are the states themselves.
    UserGuess(Vec<DVector<f64>>),
}

/// Which measurement produced an innovation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InnovationSource {
    Left,
    Right,
    Ode(usize),
}

/// Innovations of one forward pass, normalized to unit `σ`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Innovations {
    pub blocks: Vec<(InnovationSource, Innovation)>,
}

impl Innovations {
    /// `Ψ₀ = Σ zᵀ S⁻¹ z`.
    pub fn psi0(&self) -> Result<f64> {
        let mut total = 0.0;
        for (source, inn) in &self.blocks {
            total += inn.mahalanobis_sq().map_err(|e| match e {
                Error::SingularCovariance(msg) => {
                    Error::SingularCovariance(format!("{source:?} innovation: {msg}"))
                }
                other => other,
            })?;
        }
        Ok(total)
    }

    /// `Ψ₁`: the number of informative scalar observations.
    pub fn psi1(&self) -> usize {
        self.blocks.iter().map(|(_, inn)| inn.dim()).sum()
    }
}

/// The smoothing posterior over a mesh, with dense output.
#[derive(Clone, Debug)]
pub struct Posterior {
    mesh: Vec<f64>,
    prior: IwpPrior,
    filtered: Vec<Gaussian>,
    smoothed: Vec<Gaussian>,
    /// `backward[n]` is `p(Y(t_n) | Y(t_{n+1}), data up to t_n)`.
    backward: Vec<AffineConditional>,
    linearizations: Vec<LinearizedObservation>,
    bridge_bc: Option<BoundaryConditions>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub diverged: bool,
}

impl Posterior {
    pub fn mesh(&self) -> &[f64] {
        &self.mesh
    }

    pub fn prior(&self) -> &IwpPrior {
        &self.prior
    }

    pub fn sigma_sq(&self) -> f64 {
        self.prior.sigma_sq()
    }

    /// Smoothing marginals at the mesh nodes.
    pub fn nodes(&self) -> &[Gaussian] {
        &self.smoothed
    }

    pub fn filtered(&self) -> &[Gaussian] {
        &self.filtered
    }

    pub fn backward_models(&self) -> &[AffineConditional] {
        &self.backward
    }

    pub fn linearizations(&self) -> &[LinearizedObservation] {
        &self.linearizations
    }

    pub fn used_bridge(&self) -> bool {
        self.bridge_bc.is_some()
    }

    pub fn means(&self) -> Vec<DVector<f64>> {
        self.smoothed.iter().map(|g| g.mean().clone()).collect()
    }

    /// Rescales every covariance to a new `σ²`; means are unchanged.
    pub fn with_sigma_sq(&self, sigma_sq: f64) -> Result<Posterior> {
        let ratio = sigma_sq / self.prior.sigma_sq();
        let mut out = self.clone();
        out.prior = self.prior.clone().with_sigma_sq(sigma_sq)?;
        out.filtered = self.filtered.iter().map(|g| g.scale_cov(ratio)).collect();
        out.smoothed = self.smoothed.iter().map(|g| g.scale_cov(ratio)).collect();
        out.backward = self.backward.iter().map(|c| c.scale_noise(ratio)).collect();
        Ok(out)
    }

    /// Index `n` with `t_n ≤ t < t_{n+1}`, or the last interval for `t = t_max`.
    fn interval_of(&self, t: f64) -> usize {
        let idx = self.mesh.partition_point(|&x| x <= t);
        idx.saturating_sub(1).min(self.mesh.len() - 2)
    }

    /// The posterior marginal of the full state at any `t` in the domain.
    pub fn interpolate(&self, t: f64) -> Result<Gaussian> {
        let (t0, tmax) = (self.mesh[0], *self.mesh.last().expect("mesh is nonempty"));
        if !(t0 <= t && t <= tmax) {
            return Err(Error::OutOfDomain { t, t0, tmax });
        }
        if let Ok(i) = self.mesh.binary_search_by(|x| x.total_cmp(&t)) {
            return Ok(self.smoothed[i].clone());
        }
        let n = self.interval_of(t);
        let (left, right) = (self.mesh[n], self.mesh[n + 1]);
        let (to_t, s1) = self.conditional(left, t)?;
        let predicted = to_t.marginalize(&self.filtered[n], Some(&s1))?;
        let (to_right, s2) = self.conditional(t, right)?;
        let back = to_right.backward(&predicted, Some(&s2))?;
        back.marginalize(&self.smoothed[n + 1], Some(&s2))
    }

    fn conditional(&self, t: f64, t_next: f64) -> Result<(AffineConditional, DVector<f64>)> {
        match &self.bridge_bc {
            Some(bc) => bridge::bridge_conditional(&self.prior, bc, t, t_next),
            None => bridge::prior_conditional(&self.prior, t, t_next),
        }
    }

    /// Largest ODE residual of the smoothing means over the nodes.
    pub fn residual_sup(&self, problem: &BvProblem) -> Result<f64> {
        let mut worst = 0.0_f64;
        for (g, &t) in self.smoothed.iter().zip(&self.mesh) {
            let r = information::ode_residual(problem, &self.prior, g.mean(), t)?;
            worst = worst.max(r.amax());
        }
        Ok(worst)
    }
}

pub(crate) fn validate_mesh(problem: &BvProblem, mesh: &[f64]) -> Result<()> {
    if mesh.len() < 2 {
        return Err(Error::InvalidArgument("mesh needs at least two nodes".into()));
    }
    if mesh[0] != problem.t0() || *mesh.last().expect("nonempty") != problem.tmax() {
        return Err(Error::InvalidArgument(format!(
            "mesh must span [{}, {}], got [{}, {}]",
            problem.t0(),
            problem.tmax(),
            mesh[0],
            mesh[mesh.len() - 1]
        )));
    }
    if mesh.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument("mesh must be strictly increasing".into()));
    }
    Ok(())
}

enum Linearize<'a> {
    OnTheFly,
    At(&'a [DVector<f64>]),
}

struct ForwardPass {
    filtered: Vec<Gaussian>,
    transitions: Vec<(AffineConditional, DVector<f64>)>,
    linearizations: Vec<LinearizedObservation>,
    innovations: Innovations,
}

fn dirac_update(
    belief: &Gaussian,
    obs: &AffineMap,
    sigma: f64,
    source: InnovationSource,
    innovations: &mut Innovations,
) -> Result<Gaussian> {
    let zeros = DVector::zeros(obs.rows());
    let upd = gaussian::update(belief, obs, &zeros, None, Some(gaussian::NEGLIGIBLE_STD))
        .map_err(|e| match e {
            Error::RankDeficient { context, row } => Error::RankDeficient {
                context: format!("{source:?} observation: {context}"),
                row,
            },
            other => other,
        })?;
    if upd.innovation.dim() > 0 {
        innovations
            .blocks
            .push((source, upd.innovation.scaled(1.0 / sigma)));
    }
    Ok(upd.posterior)
}

fn forward(
    problem: &BvProblem,
    prior: &IwpPrior,
    mesh: &[f64],
    lin: Linearize<'_>,
    use_bridge: bool,
) -> Result<ForwardPass> {
    let sigma = prior.sigma_sq().sqrt();
    let n_nodes = mesh.len();
    let (left, right) = information::boundary_observations(problem, prior)?;
    let mut innovations = Innovations::default();
    let mut filtered = Vec::with_capacity(n_nodes);
    let mut transitions = Vec::with_capacity(n_nodes - 1);
    let mut linearizations = Vec::with_capacity(n_nodes);

    let mut belief = if use_bridge {
        let (g, [il, ir]) = bridge::bridge_initial_with_innovations(prior, &problem.bc)?;
        for (src, inn) in [(InnovationSource::Left, il), (InnovationSource::Right, ir)] {
            if inn.dim() > 0 {
                innovations.blocks.push((src, inn));
            }
        }
        g
    } else {
        let init = Gaussian::new(prior.m0().clone(), prior.c0_sqrt() * sigma)?;
        dirac_update(&init, &left, sigma, InnovationSource::Left, &mut innovations)?
    };

    for n in 0..n_nodes {
        if n > 0 {
            let (cond, scale) = if use_bridge {
                bridge::bridge_conditional(prior, &problem.bc, mesh[n - 1], mesh[n])?
            } else {
                bridge::prior_conditional(prior, mesh[n - 1], mesh[n])?
            };
            belief = cond.marginalize(&belief, Some(&scale))?;
            transitions.push((cond, scale));
            if !use_bridge && n == n_nodes - 1 {
                belief = dirac_update(&belief, &right, sigma, InnovationSource::Right, &mut innovations)?;
            }
        }
        let point = match &lin {
            Linearize::OnTheFly => belief.mean().clone(),
            Linearize::At(points) => points[n].clone(),
        };
        let l = information::linearize(problem, prior, &point, mesh[n])?;
        belief = dirac_update(
            &belief,
            &l.as_affine_map(),
            sigma,
            InnovationSource::Ode(n),
            &mut innovations,
        )?;
        if belief.mean().iter().any(|v| !v.is_finite()) {
            return Err(Error::LinearizationFailure {
                t: mesh[n],
                reason: "filter produced a non-finite mean".into(),
            });
        }
        linearizations.push(l);
        filtered.push(belief.clone());
    }
    Ok(ForwardPass {
        filtered,
        transitions,
        linearizations,
        innovations,
    })
}

fn smooth(pass: ForwardPass, prior: &IwpPrior, mesh: &[f64], bridge_bc: Option<BoundaryConditions>) -> Result<Posterior> {
    let n_nodes = mesh.len();
    let mut smoothed = vec![pass.filtered[n_nodes - 1].clone(); n_nodes];
    let mut backward = Vec::with_capacity(n_nodes - 1);
    for n in (0..n_nodes - 1).rev() {
        let (cond, scale) = &pass.transitions[n];
        let back = cond.backward(&pass.filtered[n], Some(scale))?;
        smoothed[n] = back.marginalize(&smoothed[n + 1], Some(scale))?;
        backward.push(back);
    }
    backward.reverse();
    let mut post = Posterior {
        mesh: mesh.to_vec(),
        prior: prior.clone(),
        filtered: pass.filtered,
        smoothed,
        backward,
        linearizations: pass.linearizations,
        bridge_bc,
        objective: 0.0,
        iterations: 0,
        converged: false,
        diverged: false,
    };
    post.objective = map_objective(prior, mesh, &post.means())?;
    Ok(post)
}

/// One forward-backward pass to initialize the iteration on a mesh.
pub fn eks_initialize(
    problem: &BvProblem,
    prior: &IwpPrior,
    mesh: &[f64],
    strategy: &InitStrategy,
) -> Result<(Posterior, Innovations)> {
    validate_mesh(problem, mesh)?;
    match strategy {
        InitStrategy::Bridge => {
            let pass = forward(problem, prior, mesh, Linearize::OnTheFly, true)?;
            let innov = pass.innovations.clone();
            Ok((smooth(pass, prior, mesh, Some(problem.bc.clone()))?, innov))
        }
        InitStrategy::Conventional => {
            let pass = forward(problem, prior, mesh, Linearize::OnTheFly, false)?;
            let innov = pass.innovations.clone();
            Ok((smooth(pass, prior, mesh, None)?, innov))
        }
        InitStrategy::UserGuess(points) => {
            ensure_dim("initial guess nodes", mesh.len(), points.len())?;
            for p in points {
                ensure_dim("initial guess state", prior.state_dim(), p.len())?;
            }
            let pass = forward(problem, prior, mesh, Linearize::At(points), false)?;
            let innov = pass.innovations.clone();
            let mut post = smooth(pass, prior, mesh, None)?;
            for (g, p) in post.smoothed.iter_mut().zip(points) {
                *g = g.with_mean(p.clone())?;
            }
            post.objective = map_objective(prior, mesh, points)?;
            Ok((post, innov))
        }
    }
}

/// One Gauss–Newton step: all ODE measurements linearized at the previous
/// smoothing means, plain prior, boundary updates at the end nodes.
pub fn ieks_iterate(
    problem: &BvProblem,
    prior: &IwpPrior,
    mesh: &[f64],
    previous: &Posterior,
) -> Result<(Posterior, Innovations)> {
    validate_mesh(problem, mesh)?;
    if previous.mesh != mesh {
        return Err(Error::InvalidArgument(
            "previous posterior lives on a different mesh".into(),
        ));
    }
    let points = previous.means();
    let pass = forward(problem, prior, mesh, Linearize::At(&points), false)?;
    let innov = pass.innovations.clone();
    let mut post = smooth(pass, prior, mesh, None)?;
    post.iterations = previous.iterations + 1;
    post.diverged = post.objective > 10.0 * previous.objective.max(f64::MIN_POSITIVE);
    Ok((post, innov))
}

/// Options of the Gauss–Newton loop on a fixed mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct IeksOptions {
    pub max_iters: usize,
    pub rtol_fixpoint: f64,
    /// Apply an EM update of the initial distribution every this many passes.
    pub em_every: Option<usize>,
    /// Re-estimate `σ²` after every pass.
    pub calibrate: bool,
}

impl Default for IeksOptions {
    fn default() -> Self {
        Self {
            max_iters: 10,
            rtol_fixpoint: 1e-10,
            em_every: None,
            calibrate: true,
        }
    }
}

/// Per-pass record of the Gauss–Newton loop.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub residual_sup: f64,
    pub sigma_sq: f64,
    /// Quasi log-likelihood at the re-estimated `σ²`.
    pub quasi_loglik: f64,
    /// Whether an EM update of the initial distribution followed this pass.
    pub em_applied: bool,
    pub mean_change: f64,
}

/// Result of the Gauss–Newton loop.
#[derive(Clone, Debug)]
pub struct IeksOutcome {
    pub posterior: Posterior,
    pub innovations: Innovations,
    /// The prior after calibration and EM; feeds the next mesh.
    pub prior: IwpPrior,
    pub history: Vec<IterationRecord>,
}

/// Sup-norm change and size of the means over derivatives `0..=m`.
///
/// The next linearization depends on the means only through derivatives below
/// the ODE order; higher derivatives are weakly identified and carry round-off
/// far above machine precision, so they are left out of the fixed-point test.
fn sup_norm_change(prior: &IwpPrior, order: usize, a: &[DVector<f64>], b: &[DVector<f64>]) -> (f64, f64) {
    let mut change = 0.0_f64;
    let mut size = 0.0_f64;
    for (x, y) in a.iter().zip(b) {
        for c in 0..prior.dim() {
            for q in 0..=order {
                let i = prior.index(c, q);
                change = change.max((x[i] - y[i]).abs());
                size = size.max(y[i].abs());
            }
        }
    }
    (change, size)
}

fn calibrate(post: Posterior, innov: &Innovations, enabled: bool) -> Result<(Posterior, f64)> {
    let psi0 = innov.psi0()?;
    let psi1 = innov.psi1();
    let sigma_sq = calibration::floor_sigma_sq(if psi1 == 0 { 0.0 } else { psi0 / psi1 as f64 });
    let loglik = calibration::quasi_loglik_from(psi0, psi1, sigma_sq);
    if enabled {
        Ok((post.with_sigma_sq(sigma_sq)?, loglik))
    } else {
        Ok((post, loglik))
    }
}

/// Runs the iterated smoother on a fixed mesh until the means reach a fixed
/// point or `max_iters` passes have been made.
pub fn ieks_solve(
    problem: &BvProblem,
    prior: &IwpPrior,
    mesh: &[f64],
    init: &InitStrategy,
    options: &IeksOptions,
) -> Result<IeksOutcome> {
    if options.max_iters == 0 {
        return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
    }
    let (post, innov) = eks_initialize(problem, prior, mesh, init)?;
    let (mut post, loglik) = calibrate(post, &innov, options.calibrate)?;
    let mut prior = post.prior.clone();
    let mut history = vec![IterationRecord {
        iteration: 0,
        objective: post.objective,
        residual_sup: post.residual_sup(problem)?,
        sigma_sq: post.sigma_sq(),
        quasi_loglik: loglik,
        em_applied: false,
        mean_change: f64::INFINITY,
    }];
    let mut innovations = innov;
    for it in 1..=options.max_iters {
        let (next, innov) = ieks_iterate(problem, &prior, mesh, &post)?;
        let (mut next, loglik) = calibrate(next, &innov, options.calibrate)?;
        prior = next.prior.clone();
        let (change, size) = sup_norm_change(&prior, problem.order, &post.means(), &next.means());
        let converged = change < options.rtol_fixpoint * (1.0 + size);
        let em = options.em_every.is_some_and(|k| k > 0 && it % k == 0) && it < options.max_iters;
        if em && !converged {
            let (m0, c0) = calibration::em_update(&next, prior.m0(), prior.sigma_sq())?;
            prior = prior.with_initial(m0, c0)?;
        }
        history.push(IterationRecord {
            iteration: it,
            objective: next.objective,
            residual_sup: next.residual_sup(problem)?,
            sigma_sq: next.sigma_sq(),
            quasi_loglik: loglik,
            em_applied: em && !converged,
            mean_change: change,
        });
        next.iterations = it;
        next.converged = converged;
        next.diverged |= post.diverged;
        post = next;
        innovations = innov;
        if converged {
            break;
        }
    }
    Ok(IeksOutcome {
        posterior: post,
        innovations,
        prior,
        history,
    })
}

/// The MAP objective restricted to the constraint set: the prior negative
/// log-density of the node states up to constants,
/// `½‖Y₀ − m₀‖²_{σ²C₀} + ½ Σ ‖Y_{n+1} − Φ_n Y_n‖²_{σ²Q_n}`.
///
/// Directions in which `C₀` is singular are ignored (pseudo-inverse).
pub fn map_objective(prior: &IwpPrior, mesh: &[f64], means: &[DVector<f64>]) -> Result<f64> {
    ensure_dim("objective nodes", mesh.len(), means.len())?;
    let sigma_sq = prior.sigma_sq();
    let d0 = &means[0] - prior.m0();
    let svd = SVD::new(prior.c0_sqrt().clone(), true, false);
    let u = svd.u.as_ref().expect("left singular vectors requested");
    let smax = svd.singular_values.max();
    let mut total = 0.0;
    for (j, s) in svd.singular_values.iter().enumerate() {
        if *s > 1e-12 * smax {
            total += (u.column(j).dot(&d0) / s).powi(2);
        }
    }
    for n in 0..mesh.len() - 1 {
        let tr = prior.discretize(mesh[n + 1] - mesh[n])?;
        let r = &means[n + 1] - &tr.phi * &means[n];
        let w = tr
            .q_sqrt
            .solve_lower_triangular(&r)
            .ok_or_else(|| Error::SingularCovariance(format!("process noise on step {n}")))?;
        total += w.norm_squared();
    }
    Ok(0.5 * total / sigma_sq)
}

/// Dense prior mean and covariance of the stacked node states.
pub fn dense_prior(prior: &IwpPrior, mesh: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let k = prior.state_dim();
    let n = mesh.len();
    let mut mean = DVector::zeros(k * n);
    let mut cov = DMatrix::zeros(k * n, k * n);
    let c0 = prior.c0_sqrt() * prior.c0_sqrt().transpose() * prior.sigma_sq();
    mean.rows_mut(0, k).copy_from(prior.m0());
    cov.view_mut((0, 0), (k, k)).copy_from(&c0);
    for j in 1..n {
        let tr = prior.discretize(mesh[j] - mesh[j - 1])?;
        let m = &tr.phi * mean.rows(k * (j - 1), k);
        mean.rows_mut(k * j, k).copy_from(&m);
        for i in 0..j {
            let c = cov.view((k * i, k * (j - 1)), (k, k)) * tr.phi.transpose();
            cov.view_mut((k * i, k * j), (k, k)).copy_from(&c);
            cov.view_mut((k * j, k * i), (k, k)).copy_from(&c.transpose());
        }
        let prev = cov.view((k * (j - 1), k * (j - 1)), (k, k)).into_owned();
        let c = &tr.phi * prev * tr.phi.transpose() + tr.q() * prior.sigma_sq();
        cov.view_mut((k * j, k * j), (k, k)).copy_from(&c);
    }
    Ok((mean, cov))
}

/// Stacked linear constraints `F Y + g = 0`: the boundary conditions and the
/// ODE linearized at `points`.
pub fn stacked_constraints(
    problem: &BvProblem,
    prior: &IwpPrior,
    mesh: &[f64],
    points: &[DVector<f64>],
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    ensure_dim("linearization nodes", mesh.len(), points.len())?;
    let k = prior.state_dim();
    let n = mesh.len();
    let (left, right) = information::boundary_observations(problem, prior)?;
    let d = problem.dim;
    let rows = left.rows() + right.rows() + d * n;
    let mut f = DMatrix::zeros(rows, k * n);
    let mut g = DVector::zeros(rows);
    let mut r = 0;
    f.view_mut((r, 0), (left.rows(), k)).copy_from(&left.matrix);
    g.rows_mut(r, left.rows()).copy_from(&left.offset);
    r += left.rows();
    f.view_mut((r, k * (n - 1)), (right.rows(), k)).copy_from(&right.matrix);
    g.rows_mut(r, right.rows()).copy_from(&right.offset);
    r += right.rows();
    for j in 0..n {
        let l = information::linearize(problem, prior, &points[j], mesh[j])?;
        f.view_mut((r, k * j), (d, k)).copy_from(&l.h);
        g.rows_mut(r, d).copy_from(&l.b);
        r += d;
    }
    Ok((f, g))
}

/// Dense prior as `Y = μ + L w` with `w` standard normal; `L` is assembled
/// from the initial and process-noise factors, so `L Lᵀ` is the covariance of
/// [`dense_prior`] without ever forming it.
pub fn dense_prior_factor(prior: &IwpPrior, mesh: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let k = prior.state_dim();
    let n = mesh.len();
    let sigma = prior.sigma_sq().sqrt();
    let mut blocks = vec![prior.c0_sqrt() * sigma];
    let mut phis = Vec::with_capacity(n.saturating_sub(1));
    for j in 1..n {
        let tr = prior.discretize(mesh[j] - mesh[j - 1])?;
        blocks.push(tr.q_sqrt * sigma);
        phis.push(tr.phi);
    }
    let widths: Vec<usize> = blocks.iter().map(|b| b.ncols()).collect();
    let mut l = DMatrix::zeros(k * n, widths.iter().sum());
    let mut mean = DVector::zeros(k * n);
    mean.rows_mut(0, k).copy_from(prior.m0());
    let mut col = 0;
    for (j, block) in blocks.iter().enumerate() {
        // column block j enters node j directly and later nodes through Φ
        let mut carried = block.clone();
        l.view_mut((k * j, col), carried.shape()).copy_from(&carried);
        for i in j + 1..n {
            carried = &phis[i - 1] * carried;
            l.view_mut((k * i, col), carried.shape()).copy_from(&carried);
        }
        col += widths[j];
    }
    for i in 1..n {
        let m = &phis[i - 1] * mean.rows(k * (i - 1), k);
        mean.rows_mut(k * i, k).copy_from(&m);
    }
    Ok((mean, l))
}

/// Dense Gauss–Newton step: the minimizer of the prior objective subject to
/// the constraints linearized at `points`, together with its covariance.
///
/// With `Y = μ + L w` the step is the minimum-norm `w` solving
/// `F L w = −(F μ + g)`, computed by an SVD of `F L`; the covariance is `L`
/// projected onto the null space of `F L`. Cubic in the number of nodes;
/// meant as a reference for small meshes.
pub fn batch_gauss_newton_dense(
    problem: &BvProblem,
    prior: &IwpPrior,
    mesh: &[f64],
    points: &[DVector<f64>],
) -> Result<(Vec<DVector<f64>>, DMatrix<f64>)> {
    validate_mesh(problem, mesh)?;
    let (mu, l) = dense_prior_factor(prior, mesh)?;
    let (f, g) = stacked_constraints(problem, prior, mesh, points)?;
    let fl = &f * &l;
    let resid = &f * &mu + &g;
    let svd = SVD::new(fl, true, true);
    let u = svd.u.as_ref().expect("left singular vectors requested");
    let v_t = svd.v_t.as_ref().expect("right singular vectors requested");
    let smax = svd.singular_values.max();
    let mut w = DVector::zeros(l.ncols());
    let mut range = Vec::new();
    for (j, s) in svd.singular_values.iter().enumerate() {
        if *s > 1e-13 * smax {
            w -= v_t.row(j).transpose() * (u.column(j).dot(&resid) / s);
            range.push(j);
        } else if u.column(j).dot(&resid).abs() > 1e-8 * (1.0 + resid.amax()) {
            return Err(Error::SingularSystem("inconsistent stacked constraints".into()));
        }
    }
    let y = &mu + &l * &w;
    let mut proj = DMatrix::identity(l.ncols(), l.ncols());
    for j in range {
        let v = v_t.row(j).transpose();
        proj -= &v * v.transpose();
    }
    let cov = &l * proj * l.transpose();
    let k = prior.state_dim();
    let means = (0..mesh.len())
        .map(|j| y.rows(k * j, k).into_owned())
        .collect();
    Ok((means, cov))
}

/// Means of [`batch_gauss_newton_dense`].
pub fn batch_gauss_newton_oracle(
    problem: &BvProblem,
    prior: &IwpPrior,
    mesh: &[f64],
    points: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    Ok(batch_gauss_newton_dense(problem, prior, mesh, points)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::information::{Jacobian, VectorField};
    use nalgebra::dvector;
    use std::sync::Arc;

    fn linear_poly() -> BvProblem {
        let f: VectorField = Arc::new(|_y: &[DVector<f64>], _t| dvector![0.0]);
        let jac: Jacobian = Arc::new(|_y: &[DVector<f64>], _t| vec![DMatrix::zeros(1, 1); 2]);
        let bc = BoundaryConditions::dirichlet(0.0, 1.0, dvector![0.0], dvector![1.0]).unwrap();
        BvProblem::new("linear_poly", 1, 2, f, Some(jac), bc).unwrap()
    }

    fn bratu() -> BvProblem {
        let f: VectorField = Arc::new(|y: &[DVector<f64>], _t| y[0].map(|v| -v.exp()));
        let jac: Jacobian = Arc::new(|y: &[DVector<f64>], _t| {
            vec![DMatrix::from_element(1, 1, -y[0][0].exp()), DMatrix::zeros(1, 1)]
        });
        let bc = BoundaryConditions::dirichlet(0.0, 1.0, dvector![0.0], dvector![0.0]).unwrap();
        BvProblem::new("bratu", 1, 2, f, Some(jac), bc).unwrap()
    }

    fn uniform(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
    }

    fn sup_diff(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max)
    }

    #[test]
    fn linear_eks_is_the_exact_posterior() {
        let p = linear_poly();
        let prior = IwpPrior::new(1, 3).unwrap();
        let mesh = uniform(6);
        for strategy in [InitStrategy::Bridge, InitStrategy::Conventional] {
            let (post, _) = eks_initialize(&p, &prior, &mesh, &strategy).unwrap();
            let zeros = vec![DVector::zeros(4); mesh.len()];
            let (oracle, cov) = batch_gauss_newton_dense(&p, &prior, &mesh, &zeros).unwrap();
            assert!(sup_diff(&post.means(), &oracle) < 1e-8, "{strategy:?}");
            for (j, g) in post.nodes().iter().enumerate() {
                let c = cov.view((4 * j, 4 * j), (4, 4));
                assert!((g.cov() - c).amax() < 1e-8, "{strategy:?} node {j}\n{}\n{}", g.cov(), c);
            }
        }
    }

    #[test]
    fn linear_problem_reaches_fixed_point_in_one_step() {
        let p = linear_poly();
        let prior = IwpPrior::new(1, 2).unwrap();
        let mesh = uniform(5);
        let (init, _) = eks_initialize(&p, &prior, &mesh, &InitStrategy::Bridge).unwrap();
        let (one, _) = ieks_iterate(&p, &prior, &mesh, &init).unwrap();
        let (two, _) = ieks_iterate(&p, &prior, &mesh, &one).unwrap();
        assert!(sup_diff(&one.means(), &two.means()) < 1e-10);
    }

    #[test]
    fn iterate_matches_batch_oracle_on_bratu() {
        let p = bratu();
        let prior = IwpPrior::new(1, 4).unwrap();
        let mesh = uniform(5);
        let (init, _) = eks_initialize(&p, &prior, &mesh, &InitStrategy::Bridge).unwrap();
        let (next, _) = ieks_iterate(&p, &prior, &mesh, &init).unwrap();
        let oracle = batch_gauss_newton_oracle(&p, &prior, &mesh, &init.means()).unwrap();
        assert!(sup_diff(&next.means(), &oracle) < 1e-8);
    }

    #[test]
    fn boundary_conditions_hold_for_every_strategy() {
        let p = bratu();
        let prior = IwpPrior::new(1, 3).unwrap();
        let mesh = uniform(7);
        for strategy in [InitStrategy::Bridge, InitStrategy::Conventional] {
            let (post, _) = eks_initialize(&p, &prior, &mesh, &strategy).unwrap();
            assert!(post.nodes()[0].mean()[0].abs() < 1e-8);
            assert!(post.nodes()[6].mean()[0].abs() < 1e-8);
            let (it, _) = ieks_iterate(&p, &prior, &mesh, &post).unwrap();
            assert!(it.nodes()[0].mean()[0].abs() < 1e-8);
            assert!(it.nodes()[6].mean()[0].abs() < 1e-8);
        }
    }

    #[test]
    fn converged_solve_has_vanishing_node_residuals() {
        let p = bratu();
        let prior = IwpPrior::new(1, 4).unwrap();
        let mesh = uniform(32);
        let out = ieks_solve(&p, &prior, &mesh, &InitStrategy::Bridge, &IeksOptions::default()).unwrap();
        assert!(out.posterior.converged);
        assert!(out.posterior.residual_sup(&p).unwrap() <= 1e-8);
    }

    #[test]
    fn infinite_tolerance_stops_after_one_pass() {
        let p = bratu();
        let prior = IwpPrior::new(1, 3).unwrap();
        let opts = IeksOptions {
            rtol_fixpoint: f64::INFINITY,
            ..IeksOptions::default()
        };
        let out = ieks_solve(&p, &prior, &uniform(6), &InitStrategy::Bridge, &opts).unwrap();
        assert_eq!(out.posterior.iterations, 1);
    }

    #[test]
    fn interpolation_reproduces_nodes_and_dense_oracle() {
        let p = linear_poly();
        let prior = IwpPrior::new(1, 2).unwrap();
        let mesh = uniform(4);
        let (post, _) = eks_initialize(&p, &prior, &mesh, &InitStrategy::Conventional).unwrap();
        for (j, &t) in mesh.iter().enumerate() {
            assert_eq!(post.interpolate(t).unwrap(), post.nodes()[j]);
        }
        // oracle on the refined mesh including midpoints
        let fine: Vec<f64> = (0..7).map(|i| i as f64 / 6.0).collect();
        let zeros = vec![DVector::zeros(3); fine.len()];
        // the linear problem conditions only at the coarse nodes: build constraints by hand
        let (mu, kk) = dense_prior(&prior, &fine).unwrap();
        let (fc, gc) = stacked_constraints(&p, &prior, &mesh, &zeros[..4]).unwrap();
        // embed coarse-node constraints into fine stacking (coarse node j = fine node 2j)
        let mut f = DMatrix::zeros(fc.nrows(), 3 * fine.len());
        for j in 0..4 {
            f.view_mut((0, 6 * j), (fc.nrows(), 3)).copy_from(&fc.view((0, 3 * j), (fc.nrows(), 3)));
        }
        let s = &f * &kk * f.transpose();
        let y = &mu - &kk * f.transpose() * s.lu().solve(&(&f * &mu + gc)).unwrap();
        for i in [1, 3, 5] {
            let g = post.interpolate(fine[i]).unwrap();
            assert!((g.mean() - y.rows(3 * i, 3)).amax() < 1e-8, "t = {}", fine[i]);
            assert!(g.std_devs().iter().all(|s| *s >= 0.0));
        }
        assert!(post.interpolate(1.5).is_err());
    }

    #[test]
    fn dense_output_is_continuous_at_nodes() {
        let p = bratu();
        let prior = IwpPrior::new(1, 4).unwrap();
        let mesh = uniform(9);
        let post = ieks_solve(&p, &prior, &mesh, &InitStrategy::Bridge, &IeksOptions::default())
            .unwrap()
            .posterior;
        let h = mesh[1] - mesh[0];
        for (n, (&tn, node)) in mesh.iter().zip(post.nodes()).enumerate().skip(1).take(mesh.len() - 2) {
            for t in [tn - 1e-9 * h, tn + 1e-9 * h] {
                let g = post.interpolate(t).unwrap();
                let tol = 1e-6 * (1.0 + node.mean().amax());
                assert!((g.mean() - node.mean()).amax() < tol, "node {n}, t = {t}");
            }
        }
    }

    #[test]
    fn backward_pass_is_identity_at_the_last_node() {
        let p = bratu();
        let prior = IwpPrior::new(1, 3).unwrap();
        let mesh = uniform(6);
        let (post, _) = eks_initialize(&p, &prior, &mesh, &InitStrategy::Conventional).unwrap();
        assert_eq!(post.nodes()[5], post.filtered()[5]);
    }
}
