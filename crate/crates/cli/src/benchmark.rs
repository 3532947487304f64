//! `benchmark` subcommand: a cartesian sweep written to CSV.

use std::time::Instant;

use pbvp::metrics::{self, EVAL_POINTS};
use pbvp::problems::{self, RegistryEntry};
use pbvp::ErrorEstimatorKind;
use rayon::prelude::*;

use crate::output::{append_csv, BenchmarkRecord};
use crate::solve::config_for;
use crate::{BenchmarkArgs, EXIT_OK};

/// Solves one cell and scores it. Failures become a row with an `error`
/// status and NaN metrics.
pub fn run_cell(
    entry: &RegistryEntry,
    order: usize,
    estimator: ErrorEstimatorKind,
    tol: f64,
    initial_mesh: usize,
) -> BenchmarkRecord {
    let config = config_for(order, tol, estimator, initial_mesh);
    let mut row = BenchmarkRecord {
        problem: entry.name.to_string(),
        order,
        estimator: estimator.name().to_string(),
        tol,
        n_final: 0,
        rmse: f64::NAN,
        anees: f64::NAN,
        runtime_s: f64::NAN,
        refinements: 0,
        ieks_iters_total: 0,
        sigma_sq: f64::NAN,
        status: "error".to_string(),
    };
    let start = Instant::now();
    let sol = match pbvp::solve(&entry.problem, &config) {
        Ok(sol) => sol,
        Err(e) => {
            eprintln!("{} nu={order} tol={tol}: {e}", entry.name);
            return row;
        }
    };
    row.runtime_s = start.elapsed().as_secs_f64();
    row.n_final = sol.mesh().len();
    row.refinements = sol.refinements();
    row.ieks_iters_total = sol.ieks_iters_total();
    row.sigma_sq = sol.sigma_sq();
    row.status = sol.status.name().to_string();
    let grid = metrics::evaluation_grid(entry.problem.t0(), entry.problem.tmax(), EVAL_POINTS);
    match metrics::score(&sol.posterior, |t| entry.reference(t), &grid) {
        Ok(s) => {
            row.rmse = s.rmse;
            row.anees = s.anees;
        }
        Err(e) => eprintln!("{} nu={order} tol={tol}: scoring failed: {e}", entry.name),
    }
    row
}

pub fn run(args: &BenchmarkArgs) -> Result<i32, String> {
    let entries = args
        .problems
        .iter()
        .map(|p| problems::get(p.trim()))
        .collect::<pbvp::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    let cells: Vec<(usize, usize, f64)> = (0..entries.len())
        .flat_map(|p| {
            args.orders
                .iter()
                .flat_map(move |&nu| args.tols.0.iter().map(move |&tol| (p, nu, tol)))
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.unwrap_or(0))
        .build()
        .map_err(|e| e.to_string())?;
    // cells run in parallel; rows are written afterwards by one writer, in
    // sweep order
    let rows: Vec<BenchmarkRecord> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(p, nu, tol)| run_cell(&entries[p], nu, args.estimator, tol, args.initial_mesh))
            .collect()
    });
    append_csv(&args.csv, &rows)?;
    Ok(EXIT_OK)
}
