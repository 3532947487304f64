//! JSON solution schema and CSV benchmark rows.

use std::io::Write;
use std::path::Path;

use pbvp::metrics::{self, EVAL_POINTS};
use pbvp::problems::RegistryEntry;
use pbvp::{Solution, SolverConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ConfigRecord {
    pub order: usize,
    pub tol: f64,
    pub estimator: String,
    pub initial_mesh: usize,
    pub max_refinements: usize,
    pub max_ieks_iters: usize,
    pub rtol_fixpoint: f64,
    pub em_every: Option<usize>,
    pub rho: f64,
    pub seed: u64,
}

impl ConfigRecord {
    pub fn new(config: &SolverConfig, initial_mesh: usize, seed: u64) -> Self {
        Self {
            order: config.order,
            tol: config.tol,
            estimator: config.estimator.name().to_string(),
            initial_mesh,
            max_refinements: config.max_refinements,
            max_ieks_iters: config.max_ieks_iters,
            rtol_fixpoint: config.rtol_fixpoint,
            em_every: config.em_every,
            rho: config.rho(),
            seed,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub n_nodes: usize,
    pub sigma_sq: f64,
    pub ieks_iters: usize,
    pub ieks_converged: bool,
    pub max_error: f64,
    pub wall_time_s: f64,
}

/// Solution mean and marginal std of `y` on the uniform evaluation grid.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DenseRecord {
    pub t: Vec<f64>,
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MetricsRecord {
    pub rmse: f64,
    pub anees: f64,
}

/// The JSON written by `solve`. Node states are stacked coordinate-major:
/// entry `c·(ν+1) + q` is derivative `q` of coordinate `c`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SolutionRecord {
    pub problem: String,
    pub config: ConfigRecord,
    pub mesh: Vec<f64>,
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
    pub sigma_sq: f64,
    pub diagnostics: Vec<RoundRecord>,
    pub status: String,
    pub failure: Option<String>,
    pub dense: DenseRecord,
    pub metrics: Option<MetricsRecord>,
}

impl SolutionRecord {
    pub fn new(entry: &RegistryEntry, config: ConfigRecord, sol: &Solution) -> pbvp::Result<Self> {
        let post = &sol.posterior;
        let nodes = post.nodes();
        let grid = metrics::evaluation_grid(entry.problem.t0(), entry.problem.tmax(), EVAL_POINTS);
        let mut dense = DenseRecord {
            t: grid.clone(),
            mean: Vec::with_capacity(grid.len()),
            std: Vec::with_capacity(grid.len()),
        };
        for &t in &grid {
            let g = metrics::solution_marginal(post, t)?;
            dense.mean.push(g.mean().iter().copied().collect());
            dense.std.push(g.std_devs().iter().copied().collect());
        }
        let metrics = metrics::score(post, |t| entry.reference(t), &grid).ok().map(|s| MetricsRecord {
            rmse: s.rmse,
            anees: s.anees,
        });
        Ok(Self {
            problem: entry.name.to_string(),
            config,
            mesh: post.mesh().to_vec(),
            mean: nodes.iter().map(|g| g.mean().iter().copied().collect()).collect(),
            std: nodes.iter().map(|g| g.std_devs().iter().copied().collect()).collect(),
            sigma_sq: sol.sigma_sq(),
            diagnostics: sol
                .diagnostics
                .iter()
                .map(|r| RoundRecord {
                    round: r.round,
                    n_nodes: r.n_nodes,
                    sigma_sq: r.sigma_sq,
                    ieks_iters: r.ieks_iters,
                    ieks_converged: r.ieks_converged,
                    max_error: r.max_error,
                    wall_time_s: r.wall_time_s,
                })
                .collect(),
            status: sol.status.name().to_string(),
            failure: sol.failure.clone(),
            dense,
            metrics,
        })
    }
}

pub const CSV_HEADER: [&str; 12] = [
    "problem",
    "order",
    "estimator",
    "tol",
    "n_final",
    "rmse",
    "anees",
    "runtime_s",
    "refinements",
    "ieks_iters_total",
    "sigma_sq",
    "status",
];

/// One benchmark cell. Floats are written in shortest round-trip form.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkRecord {
    pub problem: String,
    pub order: usize,
    pub estimator: String,
    pub tol: f64,
    pub n_final: usize,
    pub rmse: f64,
    pub anees: f64,
    pub runtime_s: f64,
    pub refinements: usize,
    pub ieks_iters_total: usize,
    pub sigma_sq: f64,
    pub status: String,
}

impl BenchmarkRecord {
    pub fn fields(&self) -> [String; 12] {
        [
            self.problem.clone(),
            self.order.to_string(),
            self.estimator.clone(),
            self.tol.to_string(),
            self.n_final.to_string(),
            self.rmse.to_string(),
            self.anees.to_string(),
            self.runtime_s.to_string(),
            self.refinements.to_string(),
            self.ieks_iters_total.to_string(),
            self.sigma_sq.to_string(),
            self.status.clone(),
        ]
    }
}

/// Appends rows to `path`, writing the header first when the file is new or
/// empty. An existing file with a different header is left untouched.
pub fn append_csv(path: &Path, rows: &[BenchmarkRecord]) -> Result<(), String> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    if !fresh {
        let mut reader = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let header = reader.headers().map_err(|e| format!("{}: {e}", path.display()))?;
        if header.iter().ne(CSV_HEADER) {
            return Err(format!(
                "{}: existing header does not match `{}`",
                path.display(),
                CSV_HEADER.join(",")
            ));
        }
    }
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| format!("{}: {e}", path.display()))?;
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    let io = |e: csv::Error| format!("{}: {e}", path.display());
    if fresh {
        writer.write_record(CSV_HEADER).map_err(io)?;
    }
    for row in rows {
        writer.write_record(row.fields()).map_err(io)?;
    }
    writer.flush().map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(())
}

/// Writes `value` as pretty JSON to `path`, or to standard output.
pub fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<(), String> {
    let text = serde_json::to_string_pretty(value).map_err(|e| e.to_string())?;
    match path {
        Some(p) => std::fs::write(p, text + "\n").map_err(|e| format!("{}: {e}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            writeln!(out, "{text}").map_err(|e| e.to_string())
        }
    }
}
