//! Command-line front end: single solves to JSON, benchmark sweeps to CSV.

pub mod benchmark;
pub mod output;
pub mod solve;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use pbvp::ErrorEstimatorKind;

/// Exit code for a converged solve or a completed sweep.
pub const EXIT_OK: i32 = 0;
/// Exit code for a runtime error (unknown problem, I/O, solver failure).
pub const EXIT_ERROR: i32 = 1;
/// Exit code for a solve that ran but did not reach the tolerance.
pub const EXIT_NOT_CONVERGED: i32 = 2;
/// Exit code for unusable command-line flags.
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "pbvp", version, about = "Probabilistic boundary value problem solver")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one registry problem and write the posterior as JSON.
    Solve(SolveArgs),
    /// Sweep problems × tolerances × orders and write one CSV row per cell.
    Benchmark(BenchmarkArgs),
    /// Re-evaluate a JSON solution file against its registry reference.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Registry problem name.
    #[arg(long)]
    pub problem: String,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Number of integrations ν of the prior.
    #[arg(long, default_value_t = 4)]
    pub order: usize,
    #[arg(long, default_value = "std-dev", value_parser = parse_estimator)]
    pub estimator: ErrorEstimatorKind,
    /// Number of equidistant nodes of the first mesh.
    #[arg(long, default_value_t = 3)]
    pub initial_mesh: usize,
    #[arg(long, default_value_t = 20)]
    pub max_refinements: usize,
    /// JSON destination; standard output when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Re-estimate the initial distribution every K IEKS iterations.
    #[arg(long)]
    pub em_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Comma-separated registry names.
    #[arg(long, value_delimiter = ',', required = true)]
    pub problems: Vec<String>,
    /// `A:B` for one tolerance per decade from A to B, or a comma list.
    #[arg(long, default_value = "1e-1:1e-6", value_parser = parse_tols)]
    pub tols: Tolerances,
    #[arg(long, value_delimiter = ',', default_value = "2,4,6")]
    pub orders: Vec<usize>,
    #[arg(long, default_value = "std-dev", value_parser = parse_estimator)]
    pub estimator: ErrorEstimatorKind,
    #[arg(long, default_value_t = 3)]
    pub initial_mesh: usize,
    #[arg(long)]
    pub csv: PathBuf,
    /// Cells solved in parallel; all cores when omitted.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// JSON file written by `solve`.
    #[arg(long)]
    pub input: PathBuf,
}

/// Tolerances of a sweep, largest first.
#[derive(Clone, Debug, PartialEq)]
pub struct Tolerances(pub Vec<f64>);

fn parse_estimator(s: &str) -> Result<ErrorEstimatorKind, String> {
    ErrorEstimatorKind::parse(s).ok_or_else(|| format!("unknown estimator `{s}` (std-dev, residual, prob-residual)"))
}

fn positive(s: &str) -> Result<f64, String> {
    let x: f64 = s.trim().parse().map_err(|_| format!("`{s}` is not a number"))?;
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(format!("tolerance `{s}` must be positive"))
    }
}

/// Splits `1e-3` into mantissa `1` and exponent `-3`.
fn scientific(s: &str) -> Option<(&str, i32)> {
    let (m, e) = s.trim().split_once(['e', 'E'])?;
    Some((m, e.parse().ok()?))
}

/// `A:B` gives one value per decade between `A` and `B`; when both share a
/// mantissa in scientific notation each value is parsed from its decimal
/// form, so `1e-1:1e-3` yields exactly `0.1, 0.01, 0.001`.
pub fn parse_tols(s: &str) -> Result<Tolerances, String> {
    let Some((a, b)) = s.split_once(':') else {
        let mut v = s.split(',').map(positive).collect::<Result<Vec<f64>, _>>()?;
        v.sort_by(|x, y| y.total_cmp(x));
        v.dedup();
        return Ok(Tolerances(v));
    };
    let (hi, lo) = (positive(a)?, positive(b)?);
    let (hi, lo, a, b) = if hi >= lo { (hi, lo, a, b) } else { (lo, hi, b, a) };
    let decades = (hi / lo).log10().round() as i32;
    if ((hi / lo).log10() - decades as f64).abs() > 1e-9 {
        return Err(format!("`{s}`: endpoints must be a whole number of decades apart"));
    }
    let values = match (scientific(a), scientific(b)) {
        (Some((ma, ea)), Some((mb, _))) if ma == mb => (0..=decades)
            .map(|k| format!("{ma}e{}", ea - k).parse::<f64>().expect("valid literal"))
            .collect(),
        _ => (0..=decades).map(|k| hi / 10f64.powi(k)).collect(),
    };
    Ok(Tolerances(values))
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Solve(a) => solve::run(a),
        Command::Benchmark(a) => benchmark::run(a),
        Command::Evaluate(a) => solve::evaluate(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}
