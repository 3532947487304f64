//! `solve` and `evaluate` subcommands.

use nalgebra::DVector;
use pbvp::metrics;
use pbvp::problems;
use pbvp::{InitialMesh, SolveStatus, SolverConfig};
use serde::Serialize;

use crate::output::{write_json, ConfigRecord, SolutionRecord};
use crate::{EvaluateArgs, SolveArgs, EXIT_ERROR, EXIT_NOT_CONVERGED, EXIT_OK};

pub fn config_for(order: usize, tol: f64, estimator: pbvp::ErrorEstimatorKind, initial_mesh: usize) -> SolverConfig {
    SolverConfig {
        order,
        tol,
        estimator,
        initial_mesh: InitialMesh::Uniform(initial_mesh),
        ..Default::default()
    }
}

pub fn run(args: &SolveArgs) -> Result<i32, String> {
    let entry = problems::get(&args.problem).map_err(|e| e.to_string())?;
    let config = SolverConfig {
        max_refinements: args.max_refinements,
        em_every: args.em_every,
        ..config_for(args.order, args.tol, args.estimator, args.initial_mesh)
    };
    let sol = pbvp::solve(&entry.problem, &config).map_err(|e| e.to_string())?;
    let record = SolutionRecord::new(&entry, ConfigRecord::new(&config, args.initial_mesh, args.seed), &sol)
        .map_err(|e| e.to_string())?;
    write_json(&record, args.output.as_deref())?;
    Ok(match sol.status {
        SolveStatus::Converged => EXIT_OK,
        _ => {
            eprintln!(
                "not converged: {}{}",
                sol.status.name(),
                sol.failure.as_deref().map(|f| format!(" ({f})")).unwrap_or_default()
            );
            EXIT_NOT_CONVERGED
        }
    })
}

#[derive(Serialize)]
struct Evaluation {
    problem: String,
    rmse: f64,
    stored_rmse: Option<f64>,
}

/// Recomputes the RMSE of a stored solution from its dense block.
pub fn evaluate(args: &EvaluateArgs) -> Result<i32, String> {
    let text = std::fs::read_to_string(&args.input).map_err(|e| format!("{}: {e}", args.input.display()))?;
    let record: SolutionRecord =
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", args.input.display()))?;
    let entry = problems::get(&record.problem).map_err(|e| e.to_string())?;
    let means: Vec<DVector<f64>> = record.dense.mean.iter().map(|m| DVector::from_column_slice(m)).collect();
    let truths = record
        .dense
        .t
        .iter()
        .map(|&t| entry.reference(t))
        .collect::<pbvp::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    let rmse = metrics::rmse_from(&means, &truths).map_err(|e| e.to_string())?;
    let stored_rmse = record.metrics.as_ref().map(|m| m.rmse);
    write_json(
        &Evaluation {
            problem: record.problem.clone(),
            rmse,
            stored_rmse,
        },
        None,
    )?;
    match stored_rmse {
        Some(s) if s.to_bits() != rmse.to_bits() => {
            eprintln!("stored rmse {s} differs from recomputed {rmse}");
            Ok(EXIT_ERROR)
        }
        _ => Ok(EXIT_OK),
    }
}
