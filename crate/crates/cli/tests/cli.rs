use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn pbvp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pbvp")).args(args).output().expect("binary runs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn read_csv(path: &Path) -> Vec<csv::StringRecord> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(
        header.join(","),
        "problem,order,estimator,tol,n_final,rmse,anees,runtime_s,refinements,ieks_iters_total,sigma_sq,status"
    );
    reader.records().map(|r| r.unwrap()).collect()
}

fn column(rows: &[csv::StringRecord], i: usize) -> Vec<f64> {
    rows.iter().map(|r| r[i].parse().unwrap()).collect()
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        // ties share their average rank
        for k in i..=j {
            r[idx[k]] = (i + j) as f64 / 2.0;
        }
        i = j + 1;
    }
    r
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[test]
fn linear_solve_echoes_the_domain() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("lp.json");
    let o = pbvp(&["solve", "--problem", "linear_poly", "--tol", "1e-6", "--order", "2", "--output", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = read_json(&out);
    let mesh = v["mesh"].as_array().unwrap();
    assert_eq!(mesh.first().unwrap().as_f64(), Some(0.0));
    assert_eq!(mesh.last().unwrap().as_f64(), Some(1.0));
    assert_eq!(v["status"], "converged");
    // one full state per node, three derivatives for ν = 2
    assert_eq!(v["mean"].as_array().unwrap().len(), mesh.len());
    assert_eq!(v["mean"][0].as_array().unwrap().len(), 3);
    assert_eq!(v["std"].as_array().unwrap().len(), mesh.len());
    assert_eq!(v["dense"]["t"].as_array().unwrap().len(), 257);
    for key in ["problem", "config", "sigma_sq", "diagnostics"] {
        assert!(!v[key].is_null(), "{key}");
    }
}

#[test]
fn unknown_problem_lists_the_registry() {
    let o = pbvp(&["solve", "--problem", "nosuch"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    for name in pbvp::problems::AVAILABLE {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn bad_flags_exit_64() {
    assert_eq!(pbvp(&["solve", "--problem", "bratu", "--tol", "x"]).status.code(), Some(64));
    assert_eq!(pbvp(&["benchmark", "--csv", "out.csv"]).status.code(), Some(64));
}

#[test]
fn bratu_converges() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bratu.json");
    let o = pbvp(&["solve", "--problem", "bratu", "--tol", "1e-4", "--order", "4", "--output", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_json(&out)["status"], "converged");
}

#[test]
fn non_convergence_exits_2_and_still_writes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m7.json");
    let o = pbvp(&[
        "solve", "--problem", "mazzia7", "--tol", "1e-9", "--max-refinements", "1", "--output", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(read_json(&out)["status"], "max_refinements_reached");
}

#[test]
fn solution_file_reevaluates_to_the_same_rmse() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bratu.json");
    let path = out.to_str().unwrap();
    assert_eq!(pbvp(&["solve", "--problem", "bratu", "--tol", "1e-5", "--output", path]).status.code(), Some(0));
    let o = pbvp(&["evaluate", "--input", path]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["rmse"].as_f64(), read_json(&out)["metrics"]["rmse"].as_f64());
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("sweep.csv");
    let o = pbvp(&[
        "benchmark", "--problems", "linear_poly,bratu", "--tols", "1e-1:1e-3", "--orders", "2,4", "--csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_csv(&csv);
    assert_eq!(rows.len(), 2 * 3 * 2);
    assert!(rows.iter().all(|r| &r[11] == "converged"));
    assert_eq!(column(&rows, 3)[..3], [0.1, 0.01, 0.001]);
}

#[test]
#[ignore = "known failure: coarse tolerances stop before EM recalibrates the prior"]
fn linear_poly_rmse_at_every_tol() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("linear.csv");
    let o = pbvp(&["benchmark", "--problems", "linear_poly", "--tols", "1e-1:1e-6", "--orders", "2,4,6", "--csv", csv.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let rows = read_csv(&csv);
    let worst = rows.iter().map(|r| (r[5].parse::<f64>().unwrap(), r[1].to_string(), r[3].to_string())).fold(
        (0.0, String::new(), String::new()),
        |a, b| if b.0 > a.0 { b } else { a },
    );
    assert!(worst.0 <= 1e-8, "rmse {} at order {} tol {}", worst.0, worst.1, worst.2);
}

#[test]
fn rerun_reproduces_numeric_columns() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for p in [&a, &b] {
        let o = pbvp(&["benchmark", "--problems", "bratu", "--tols", "1e-2:1e-4", "--orders", "3", "--csv", p.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
    }
    let (ra, rb) = (read_csv(&a), read_csv(&b));
    for (x, y) in ra.iter().zip(&rb) {
        for i in (0..12).filter(|&i| i != 7) {
            assert_eq!(&x[i], &y[i], "column {i}");
        }
    }
}

#[test]
fn runtime_tracks_mesh_size() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bratu.csv");
    let o = pbvp(&[
        "benchmark", "--problems", "bratu", "--tols", "1e-2:1e-11", "--orders", "4", "--jobs", "1", "--csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_csv(&csv);
    let (n, t) = (column(&rows, 4), column(&rows, 7));
    let rho = spearman(&n, &t);
    assert!(rho >= 0.8, "spearman {rho}: n {n:?} runtime {t:?}");
}
