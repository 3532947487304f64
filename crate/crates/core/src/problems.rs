//! Test problems with reference solutions.
//!
//! Problems without a closed-form solution get a reference from a fixed-mesh
//! solve on a fine uniform grid. Those solves are cached on disk, in
//! `PBVP_CACHE_DIR` or a directory under the system temp dir, keyed by a hash
//! of the problem name, its parameters and the discretization.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use sha2::{Digest, Sha256};
use statrs::function::erf::erf;

use crate::bridge::BoundaryConditions;
use crate::error::{Error, Result};
use crate::inference::{self, IeksOptions, InitStrategy};
use crate::information::BvProblem;
use crate::prior::IwpPrior;
use crate::solver::{self, uniform_mesh, SolverConfig};

/// Derivatives `0..=m` of an exact solution at `t`.
pub type ExactFn = Arc<dyn Fn(f64) -> Vec<DVector<f64>> + Send + Sync>;

/// Nodes of the fine reference mesh.
pub const REFERENCE_NODES: usize = 4096;

const CACHE_FORMAT: &str = "pbvp-reference-v1";

#[derive(Clone)]
pub enum Reference {
    Analytic(ExactFn),
    /// A fixed-mesh solve on this many uniform nodes, computed on first use.
    FineMesh {
        nodes: usize,
        cache: Arc<OnceLock<FineReference>>,
    },
}

impl std::fmt::Debug for Reference {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Reference::Analytic(_) => f.write_str("Analytic"),
            Reference::FineMesh { nodes, .. } => write!(f, "FineMesh({nodes})"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RegistryEntry {
    pub name: &'static str,
    pub problem: BvProblem,
    pub reference: Reference,
    pub params: Vec<(&'static str, f64)>,
    pub notes: &'static str,
}

impl RegistryEntry {
    pub fn param(&self, key: &str) -> Option<f64> {
        self.params.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
    }

    /// Hash of everything that determines the fine reference.
    pub fn fingerprint(&self, nodes: usize, order: usize) -> String {
        let mut desc = format!("{CACHE_FORMAT}|{}|n={nodes}|nu={order}", self.name);
        for (k, v) in &self.params {
            let _ = write!(desc, "|{k}={v:?}");
        }
        hex::encode(Sha256::digest(desc.as_bytes()))
    }

    /// The reference solution at `t`.
    pub fn reference(&self, t: f64) -> Result<DVector<f64>> {
        reference_solution(self, t)
    }

    /// The reference derivative stack `0..=m` at `t`, for analytic references.
    pub fn exact_derivatives(&self, t: f64) -> Option<Vec<DVector<f64>>> {
        match &self.reference {
            Reference::Analytic(f) => Some(f(t)),
            Reference::FineMesh { .. } => None,
        }
    }
}

/// Names accepted by [`get`].
pub const AVAILABLE: [&str; 11] = [
    "linear_poly",
    "bratu",
    "mazzia7",
    "mazzia20",
    "mazzia23",
    "mazzia24",
    "mazzia28",
    "mazzia32",
    "pendulum",
    "pendulum_first_order",
    "seir",
];

pub fn get(name: &str) -> Result<RegistryEntry> {
    match name {
        "linear_poly" => Ok(linear_poly()),
        "bratu" => Ok(bratu()),
        "mazzia7" => Ok(mazzia7(1e-3)),
        "mazzia20" => Ok(mazzia20(0.5)),
        "mazzia23" => Ok(mazzia23(5.0)),
        "mazzia24" => Ok(mazzia24(0.1)),
        "mazzia28" => Ok(mazzia28(0.1)),
        "mazzia32" => Ok(mazzia32(0.1)),
        "pendulum" => Ok(pendulum()),
        "pendulum_first_order" => Ok(pendulum_first_order()),
        "seir" => Ok(seir()),
        _ => Err(Error::UnknownProblem {
            name: name.to_string(),
            available: AVAILABLE.iter().map(|s| s.to_string()).collect(),
        }),
    }
}

/// The reference solution value `y*(t)`.
pub fn reference_solution(entry: &RegistryEntry, t: f64) -> Result<DVector<f64>> {
    let (t0, tmax) = (entry.problem.t0(), entry.problem.tmax());
    if !(t0 <= t && t <= tmax) {
        return Err(Error::OutOfDomain { t, t0, tmax });
    }
    match &entry.reference {
        Reference::Analytic(f) => Ok(f(t).swap_remove(0)),
        Reference::FineMesh { nodes, cache } => {
            if let Some(fine) = cache.get() {
                return fine.value(t);
            }
            let fine = cached_fine_reference(entry, *nodes)?;
            let fine = cache.get_or_init(|| fine);
            fine.value(t)
        }
    }
}

fn scalar(f: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static) -> crate::information::VectorField {
    Arc::new(move |d: &[DVector<f64>], t| {
        let v: Vec<f64> = d.iter().map(|x| x[0]).collect();
        dvector![f(t, &v)]
    })
}

fn scalar_jac(j: impl Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static) -> crate::information::Jacobian {
    Arc::new(move |d: &[DVector<f64>], t| {
        let v: Vec<f64> = d.iter().map(|x| x[0]).collect();
        j(t, &v).into_iter().map(|x| dmatrix![x]).collect()
    })
}

fn exact(f: impl Fn(f64) -> Vec<f64> + Send + Sync + 'static) -> Reference {
    Reference::Analytic(Arc::new(move |t| f(t).into_iter().map(|x| dvector![x]).collect()))
}

fn fine() -> Reference {
    Reference::FineMesh {
        nodes: REFERENCE_NODES,
        cache: Arc::new(OnceLock::new()),
    }
}

fn dirichlet(t0: f64, tmax: f64, a: f64, b: f64) -> BoundaryConditions {
    BoundaryConditions::dirichlet(t0, tmax, dvector![a], dvector![b]).expect("valid interval")
}

/// `y'' = 0`, `y(0) = 0`, `y(1) = 1`; exact `y = t`.
pub fn linear_poly() -> RegistryEntry {
    let problem = BvProblem::new(
        "linear_poly",
        1,
        2,
        scalar(|_, _| 0.0),
        Some(scalar_jac(|_, _| vec![0.0, 0.0])),
        dirichlet(0.0, 1.0, 0.0, 1.0),
    )
    .expect("valid problem");
    RegistryEntry {
        name: "linear_poly",
        problem,
        reference: exact(|t| vec![t, 1.0, 0.0]),
        params: vec![],
        notes: "exact solution y = t",
    }
}

/// The `θ` of the lower solution branch of Bratu's problem with `λ = 1`.
pub fn bratu_theta() -> f64 {
    // θ = √(2λ) cosh(θ/4), Newton from the lower branch
    let mut th = 1.5_f64;
    for _ in 0..50 {
        let g = th - 2f64.sqrt() * (th / 4.0).cosh();
        let dg = 1.0 - 2f64.sqrt() * (th / 4.0).sinh() / 4.0;
        th -= g / dg;
    }
    th
}

/// `y'' + e^y = 0` on `[0, 1]` with `y(0) = y(1) = 0`, lower branch.
pub fn bratu() -> RegistryEntry {
    let problem = BvProblem::new(
        "bratu",
        1,
        2,
        scalar(|_, y| -y[0].exp()),
        Some(scalar_jac(|_, y| vec![-y[0].exp(), 0.0])),
        dirichlet(0.0, 1.0, 0.0, 0.0),
    )
    .expect("valid problem");
    let th = bratu_theta();
    RegistryEntry {
        name: "bratu",
        problem,
        reference: exact(move |t| {
            let u = (t - 0.5) * th / 2.0;
            let y = -2.0 * (u.cosh() / (th / 4.0).cosh()).ln();
            vec![y, -th * u.tanh(), -0.5 * th * th / u.cosh().powi(2)]
        }),
        params: vec![("lambda", 1.0)],
        notes: "lambda = 1; exact lower-branch solution -2 ln(cosh((t-1/2) theta/2) / cosh(theta/4))",
    }
}

/// `ε y'' + t y' − y = −(1 + ε π²) cos(π t) − π t sin(π t)` on `[−1, 1]`,
/// `y(−1) = −1`, `y(1) = 1`. The derivative has a layer of width `√ε` at 0.
pub fn mazzia7(eps: f64) -> RegistryEntry {
    use std::f64::consts::PI;
    let problem = BvProblem::new(
        "mazzia7",
        1,
        2,
        scalar(move |t, y| {
            (-t * y[1] + y[0] - (1.0 + eps * PI * PI) * (PI * t).cos() - PI * t * (PI * t).sin()) / eps
        }),
        Some(scalar_jac(move |t, _| vec![1.0 / eps, -t / eps])),
        dirichlet(-1.0, 1.0, -1.0, 1.0),
    )
    .expect("valid problem");
    let s = (2.0 * eps).sqrt();
    RegistryEntry {
        name: "mazzia7",
        problem,
        reference: exact(move |t| {
            let g = (-t * t / (2.0 * eps)).exp();
            let y = (PI * t).cos() + t + t * erf(t / s) + (2.0 * eps / PI).sqrt() * g;
            let dy = -PI * (PI * t).sin() + 1.0 + erf(t / s);
            let ddy = -PI * PI * (PI * t).cos() + (2.0 / (PI * eps)).sqrt() * g;
            vec![y, dy, ddy]
        }),
        params: vec![("eps", eps)],
        notes: "test-set problem 7; exact solution cos(pi t) + t + t erf(t/sqrt(2 eps)) + sqrt(2 eps/pi) exp(-t^2/(2 eps))",
    }
}

/// `ln cosh x` without overflow for large `|x|`.
fn ln_cosh(x: f64) -> f64 {
    x.abs() + (-2.0 * x.abs()).exp().ln_1p() - std::f64::consts::LN_2
}

/// `ε y'' + (y')² = 1` on `[0, 1]`; exact `y = 1 + ε ln cosh((t − 0.745)/ε)`.
pub fn mazzia20(eps: f64) -> RegistryEntry {
    let y = move |t: f64| 1.0 + eps * ln_cosh((t - 0.745) / eps);
    let problem = BvProblem::new(
        "mazzia20",
        1,
        2,
        scalar(move |_, y| (1.0 - y[1] * y[1]) / eps),
        Some(scalar_jac(move |_, y| vec![0.0, -2.0 * y[1] / eps])),
        dirichlet(0.0, 1.0, y(0.0), y(1.0)),
    )
    .expect("valid problem");
    RegistryEntry {
        name: "mazzia20",
        problem,
        reference: exact(move |t| {
            let s = (t - 0.745) / eps;
            let e = (-2.0 * s.abs()).exp();
            vec![y(t), s.tanh(), 4.0 * e / (eps * (1.0 + e).powi(2))]
        }),
        params: vec![("eps", eps)],
        notes: "test-set problem 20; exact solution 1 + eps ln cosh((t - 0.745)/eps)",
    }
}

/// Troesch's problem `y'' = μ sinh(μ y)`, `y(0) = 0`, `y(1) = 1`.
pub fn mazzia23(mu: f64) -> RegistryEntry {
    let problem = BvProblem::new(
        "mazzia23",
        1,
        2,
        scalar(move |_, y| mu * (mu * y[0]).sinh()),
        Some(scalar_jac(move |_, y| vec![mu * mu * (mu * y[0]).cosh(), 0.0])),
        dirichlet(0.0, 1.0, 0.0, 1.0),
    )
    .expect("valid problem");
    RegistryEntry {
        name: "mazzia23",
        problem,
        reference: fine(),
        params: vec![("mu", mu)],
        notes: "test-set problem 23 (Troesch); boundary layer at t = 1",
    }
}

/// Nozzle flow `ε A y y'' − ((1+γ)/2 − ε A') y y' + y'/y + (A'/A)(1 − (γ−1)/2 y²) = 0`
/// with `A = 1 + t²`, `γ = 1.4`, `y(0) = 0.9129`, `y(1) = 0.375`.
pub fn mazzia24(eps: f64) -> RegistryEntry {
    const GAMMA: f64 = 1.4;
    let problem = BvProblem::new(
        "mazzia24",
        1,
        2,
        scalar(move |t, y| {
            let (a, da) = (1.0 + t * t, 2.0 * t);
            let (u, du) = (y[0], y[1]);
            (((1.0 + GAMMA) / 2.0 - eps * da) * u * du - du / u - (da / a) * (1.0 - (GAMMA - 1.0) / 2.0 * u * u))
                / (eps * a * u)
        }),
        None,
        dirichlet(0.0, 1.0, 0.9129, 0.375),
    )
    .expect("valid problem");
    RegistryEntry {
        name: "mazzia24",
        problem,
        reference: fine(),
        params: vec![("eps", eps), ("gamma", GAMMA)],
        notes: "test-set problem 24 (shock in a nozzle)",
    }
}

/// `ε y'' + y y' − y = 0`, `y(0) = 1`, `y(1) = 3/2`.
pub fn mazzia28(eps: f64) -> RegistryEntry {
    let problem = BvProblem::new(
        "mazzia28",
        1,
        2,
        scalar(move |_, y| (y[0] - y[0] * y[1]) / eps),
        Some(scalar_jac(move |_, y| vec![(1.0 - y[1]) / eps, -y[0] / eps])),
        dirichlet(0.0, 1.0, 1.0, 1.5),
    )
    .expect("valid problem");
    RegistryEntry {
        name: "mazzia28",
        problem,
        reference: fine(),
        params: vec![("eps", eps)],
        notes: "test-set problem 28",
    }
}

/// Fourth order: `ε y'''' = y' y'' − y y'''`, `y(0) = y'(0) = 0`, `y(1) = 1`, `y'(1) = 0`.
pub fn mazzia32(eps: f64) -> RegistryEntry {
    let bc = BoundaryConditions::new(
        0.0,
        1.0,
        DMatrix::identity(2, 2),
        dvector![0.0, 0.0],
        DMatrix::identity(2, 2),
        dvector![1.0, 0.0],
    )
    .expect("valid interval");
    let problem = BvProblem::new(
        "mazzia32",
        1,
        4,
        scalar(move |_, y| (y[1] * y[2] - y[0] * y[3]) / eps),
        Some(scalar_jac(move |_, y| {
            vec![-y[3] / eps, y[2] / eps, y[1] / eps, -y[0] / eps]
        })),
        bc,
    )
    .expect("valid problem");
    RegistryEntry {
        name: "mazzia32",
        problem,
        reference: fine(),
        params: vec![("eps", eps)],
        notes: "test-set problem 32; conditions on y and y' at both ends",
    }
}

pub const PENDULUM_T: f64 = 1.0;
pub const PENDULUM_Y0: f64 = std::f64::consts::FRAC_PI_4;
pub const PENDULUM_Y1: f64 = -std::f64::consts::FRAC_PI_4;

/// `ÿ = −9.81 sin y` between two positions.
pub fn pendulum() -> RegistryEntry {
    let problem = BvProblem::new(
        "pendulum",
        1,
        2,
        scalar(|_, y| -9.81 * y[0].sin()),
        Some(scalar_jac(|_, y| vec![-9.81 * y[0].cos(), 0.0])),
        dirichlet(0.0, PENDULUM_T, PENDULUM_Y0, PENDULUM_Y1),
    )
    .expect("valid problem");
    RegistryEntry {
        name: "pendulum",
        problem,
        reference: fine(),
        params: vec![("g", 9.81), ("t_max", PENDULUM_T), ("y0", PENDULUM_Y0), ("y1", PENDULUM_Y1)],
        notes: "pendulum between two angles",
    }
}

/// [`pendulum`] as the first-order system `(θ, ω)' = (ω, −9.81 sin θ)`.
pub fn pendulum_first_order() -> RegistryEntry {
    let select = dmatrix![1.0, 0.0];
    let bc = BoundaryConditions::new(
        0.0,
        PENDULUM_T,
        select.clone(),
        dvector![PENDULUM_Y0],
        select,
        dvector![PENDULUM_Y1],
    )
    .expect("valid interval");
    let problem = BvProblem::new(
        "pendulum_first_order",
        2,
        1,
        Arc::new(|d: &[DVector<f64>], _| dvector![d[0][1], -9.81 * d[0][0].sin()]),
        Some(Arc::new(|d: &[DVector<f64>], _| {
            vec![dmatrix![0.0, 1.0; -9.81 * d[0][0].cos(), 0.0]]
        })),
        bc,
    )
    .expect("valid problem");
    RegistryEntry {
        name: "pendulum_first_order",
        problem,
        reference: fine(),
        params: vec![("g", 9.81), ("t_max", PENDULUM_T), ("y0", PENDULUM_Y0), ("y1", PENDULUM_Y1)],
        notes: "pendulum as a first-order system in angle and angular velocity",
    }
}

pub const SEIR_BETA: f64 = 2.0;
pub const SEIR_ALPHA: f64 = 1.0;
pub const SEIR_GAMMA: f64 = 0.5;
pub const SEIR_T: f64 = 10.0;
pub const SEIR_INITIAL: [f64; 4] = [0.99, 0.0, 0.01, 0.0];

fn seir_rhs(x: &[f64; 4]) -> [f64; 4] {
    let [s, e, i, _] = *x;
    let inf = SEIR_BETA * s * i;
    [-inf, inf - SEIR_ALPHA * e, SEIR_ALPHA * e - SEIR_GAMMA * i, SEIR_GAMMA * i]
}

/// The infected fraction at `t_max` of the initial value problem, by RK4.
pub fn seir_terminal_infected() -> f64 {
    let steps = 20_000;
    let h = SEIR_T / steps as f64;
    let mut x = SEIR_INITIAL;
    let axpy = |x: &[f64; 4], k: &[f64; 4], a: f64| std::array::from_fn::<f64, 4, _>(|i| x[i] + a * k[i]);
    for _ in 0..steps {
        let k1 = seir_rhs(&x);
        let k2 = seir_rhs(&axpy(&x, &k1, h / 2.0));
        let k3 = seir_rhs(&axpy(&x, &k2, h / 2.0));
        let k4 = seir_rhs(&axpy(&x, &k3, h));
        x = std::array::from_fn(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
    }
    x[2]
}

/// SEIR in population fractions. `S, E, R` are known at `t = 0`, the
/// infected fraction only at `t_max`; it is taken from the initial value
/// problem with `I(0) = 0.01`.
pub fn seir() -> RegistryEntry {
    let mut left = DMatrix::zeros(3, 4);
    left[(0, 0)] = 1.0;
    left[(1, 1)] = 1.0;
    left[(2, 3)] = 1.0;
    let mut right = DMatrix::zeros(1, 4);
    right[(0, 2)] = 1.0;
    let bc = BoundaryConditions::new(
        0.0,
        SEIR_T,
        left,
        dvector![SEIR_INITIAL[0], SEIR_INITIAL[1], SEIR_INITIAL[3]],
        right,
        dvector![seir_terminal_infected()],
    )
    .expect("valid interval");
    let problem = BvProblem::new(
        "seir",
        4,
        1,
        Arc::new(|d: &[DVector<f64>], _| {
            let x = [d[0][0], d[0][1], d[0][2], d[0][3]];
            DVector::from_row_slice(&seir_rhs(&x))
        }),
        Some(Arc::new(|d: &[DVector<f64>], _| {
            let (s, i) = (d[0][0], d[0][2]);
            let (b, a, g) = (SEIR_BETA, SEIR_ALPHA, SEIR_GAMMA);
            vec![dmatrix![
                -b * i, 0.0, -b * s, 0.0;
                b * i, -a, b * s, 0.0;
                0.0, a, -g, 0.0;
                0.0, 0.0, g, 0.0
            ]]
        })),
        bc,
    )
    .expect("valid problem");
    RegistryEntry {
        name: "seir",
        problem,
        reference: fine(),
        params: vec![
            ("beta", SEIR_BETA),
            ("alpha", SEIR_ALPHA),
            ("gamma", SEIR_GAMMA),
            ("t_max", SEIR_T),
            ("s0", SEIR_INITIAL[0]),
            ("i0", SEIR_INITIAL[2]),
        ],
        notes: "illustrative parameters beta = 2, alpha = 1, gamma = 0.5 on [0, 10]",
    }
}

/// Node values and first two derivatives of a fine-mesh solve, with quintic
/// Hermite interpolation in between.
#[derive(Clone, Debug, PartialEq)]
pub struct FineReference {
    pub mesh: Vec<f64>,
    pub dim: usize,
    /// Per node: `y, y', y''` stacked as `q d + c`.
    pub values: Vec<Vec<f64>>,
}

impl FineReference {
    /// Solves on `nodes` uniform nodes with a prior of order `order ≥ 2`,
    /// warm-started from an adaptive solve.
    pub fn compute(problem: &BvProblem, nodes: usize, order: usize) -> Result<Self> {
        if order < 2 || order < problem.order {
            return Err(Error::InvalidArgument(format!(
                "fine reference needs a prior order of at least max(2, m), got {order}"
            )));
        }
        let coarse = solver::solve(
            problem,
            &SolverConfig {
                order,
                tol: 1e-6,
                max_refinements: 30,
                max_ieks_iters: 20,
                ..Default::default()
            },
        )?;
        let mesh = uniform_mesh(problem.t0(), problem.tmax(), nodes);
        let guess = mesh
            .iter()
            .map(|&t| coarse.posterior.interpolate(t).map(|g| g.mean().clone()))
            .collect::<Result<Vec<_>>>()?;
        let prior = IwpPrior::new(problem.dim, order)?;
        let out = inference::ieks_solve(
            problem,
            &prior,
            &mesh,
            &InitStrategy::UserGuess(guess),
            &IeksOptions {
                max_iters: 30,
                rtol_fixpoint: 1e-13,
                em_every: None,
                calibrate: true,
            },
        )?;
        let d = problem.dim;
        let values = out
            .posterior
            .means()
            .iter()
            .map(|m| {
                (0..3)
                    .flat_map(|q| (0..d).map(move |c| (q, c)))
                    .map(|(q, c)| m[prior.index(c, q)])
                    .collect()
            })
            .collect();
        Ok(Self { mesh, dim: d, values })
    }

    pub fn value(&self, t: f64) -> Result<DVector<f64>> {
        let (t0, tmax) = (self.mesh[0], *self.mesh.last().expect("nonempty mesh"));
        if !(t0 <= t && t <= tmax) {
            return Err(Error::OutOfDomain { t, t0, tmax });
        }
        let n = self.mesh.partition_point(|&x| x <= t).saturating_sub(1).min(self.mesh.len() - 2);
        let (a, b) = (self.mesh[n], self.mesh[n + 1]);
        let h = b - a;
        let u = (t - a) / h;
        let (u2, u3) = (u * u, u * u * u);
        let (u4, u5) = (u3 * u, u3 * u2);
        let basis = [
            1.0 - 10.0 * u3 + 15.0 * u4 - 6.0 * u5,
            h * (u - 6.0 * u3 + 8.0 * u4 - 3.0 * u5),
            h * h * (0.5 * u2 - 1.5 * u3 + 1.5 * u4 - 0.5 * u5),
            10.0 * u3 - 15.0 * u4 + 6.0 * u5,
            h * (-4.0 * u3 + 7.0 * u4 - 3.0 * u5),
            h * h * (0.5 * u3 - u4 + 0.5 * u5),
        ];
        let (l, r) = (&self.values[n], &self.values[n + 1]);
        let d = self.dim;
        Ok(DVector::from_fn(d, |c, _| {
            basis[0] * l[c]
                + basis[1] * l[d + c]
                + basis[2] * l[2 * d + c]
                + basis[3] * r[c]
                + basis[4] * r[d + c]
                + basis[5] * r[2 * d + c]
        }))
    }

    fn serialize(&self, fingerprint: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {CACHE_FORMAT}");
        let _ = writeln!(out, "# hash {fingerprint}");
        let _ = writeln!(out, "# nodes {} dim {}", self.mesh.len(), self.dim);
        for (t, v) in self.mesh.iter().zip(&self.values) {
            let _ = write!(out, "{t:?}");
            for x in v {
                let _ = write!(out, " {x:?}");
            }
            out.push('\n');
        }
        out
    }

    fn parse(text: &str, fingerprint: &str) -> Option<Self> {
        let mut lines = text.lines();
        if lines.next()? != format!("# {CACHE_FORMAT}") {
            return None;
        }
        if lines.next()? != format!("# hash {fingerprint}") {
            return None;
        }
        let header: Vec<&str> = lines.next()?.split_whitespace().collect();
        if header.len() != 5 || header[1] != "nodes" || header[3] != "dim" {
            return None;
        }
        let nodes: usize = header[2].parse().ok()?;
        let dim: usize = header[4].parse().ok()?;
        let mut mesh = Vec::with_capacity(nodes);
        let mut values = Vec::with_capacity(nodes);
        for line in lines {
            let nums: Vec<f64> = line.split_whitespace().map(|x| x.parse().ok()).collect::<Option<_>>()?;
            if nums.len() != 1 + 3 * dim || nums.iter().any(|x| !x.is_finite()) {
                return None;
            }
            mesh.push(nums[0]);
            values.push(nums[1..].to_vec());
        }
        if mesh.len() != nodes || nodes < 2 || mesh.windows(2).any(|w| !(w[0] < w[1])) {
            return None;
        }
        Some(Self { mesh, dim, values })
    }
}

/// Directory of the reference cache.
pub fn cache_dir() -> PathBuf {
    std::env::var_os("PBVP_CACHE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("pbvp-reference-cache"))
}

/// The prior order used for fine references of a problem.
pub fn reference_order(problem: &BvProblem) -> usize {
    4.max(problem.order + 1)
}

/// Loads the fine reference from the cache, recomputing it when the file is
/// missing or unreadable. Writes are atomic; a failed write is not an error.
pub fn cached_fine_reference(entry: &RegistryEntry, nodes: usize) -> Result<FineReference> {
    let order = reference_order(&entry.problem);
    let key = entry.fingerprint(nodes, order);
    let path = cache_dir().join(format!("{}-{}.txt", entry.name, &key[..16]));
    if let Ok(text) = fs::read_to_string(&path) {
        if let Some(fine) = FineReference::parse(&text, &key) {
            return Ok(fine);
        }
    }
    let fine = FineReference::compute(&entry.problem, nodes, order)?;
    let _ = store(&path, &fine.serialize(&key));
    Ok(fine)
}

fn store(path: &std::path::Path, text: &str) -> std::io::Result<()> {
    let dir = path.parent().expect("cache files live in a directory");
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(text.as_bytes())?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
