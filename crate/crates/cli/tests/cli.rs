use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn gencol(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gencol"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .env_remove("GENCOL_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_csv(dir: &Path, name: &str, rows: &[(&[f64], f64)]) -> PathBuf {
    let path = dir.join(name);
    let text: String = rows
        .iter()
        .map(|(p, m)| {
            let coords: Vec<String> = p.iter().map(|x| x.to_string()).collect();
            format!("{},{m}\n", coords.join(","))
        })
        .collect();
    fs::write(&path, text).unwrap();
    path
}

fn read_rows(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.is_empty() && !l.starts_with(|c: char| c.is_alphabetic()))
        .map(|l| l.split(',').map(|f| f.trim().parse().unwrap()).collect())
        .collect()
}

fn run_json(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("run.json")).unwrap()).unwrap()
}

fn three_clouds(dir: &Path) -> Vec<PathBuf> {
    vec![
        write_csv(dir, "a.csv", &[(&[0.1, 0.2], 0.3), (&[0.4, 0.9], 0.5), (&[0.8, 0.1], 0.2)]),
        write_csv(dir, "b.csv", &[(&[0.2, 0.7], 0.6), (&[0.9, 0.6], 0.4)]),
        write_csv(dir, "c.csv", &[(&[0.5, 0.5], 0.25), (&[0.3, 0.1], 0.25), (&[0.7, 0.8], 0.5)]),
    ]
}

fn paths(p: &[PathBuf]) -> Vec<&str> {
    p.iter().map(|p| p.to_str().unwrap()).collect()
}

#[test]
fn demo1d_reaches_the_exact_cost_and_is_reproducible() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let args = ["demo1d", "--size", "30", "--seed", "3"];
    let first = gencol(&args, a.path());
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let record = run_json(a.path());
    let error: f64 = record["cost_error"].as_str().unwrap().parse().unwrap();
    assert!(error.abs() <= 1e-10, "{error}");
    let second = gencol(&args, b.path());
    assert!(second.status.success());
    for name in ["plan.csv", "potentials.csv", "history.csv"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    assert_eq!(record["cost_history"], run_json(b.path())["cost_history"]);
}

#[test]
fn nwcorner_writes_a_feasible_plan() {
    let d = TempDir::new().unwrap();
    let inputs = three_clouds(d.path());
    let out = d.path().join("out");
    let mut args = vec!["nwcorner"];
    args.extend(paths(&inputs));
    let o = gencol(&args, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_rows(&out.join("plan.csv"));
    assert!(rows.len() <= 3 + 1 + 2 + 1);
    let masses = [vec![0.3, 0.5, 0.2], vec![0.6, 0.4], vec![0.25, 0.25, 0.5]];
    for (k, mk) in masses.iter().enumerate() {
        for (i, &m) in mk.iter().enumerate() {
            let got: f64 = rows.iter().filter(|r| r[k] as usize == i).map(|r| r[3]).sum();
            assert!((got - m).abs() < 1e-12, "marginal {k} point {i}: {got} vs {m}");
        }
    }
    assert_eq!(run_json(&out)["feasible"], "true");
}

#[test]
fn certify_reports_an_exact_optimum() {
    let d = TempDir::new().unwrap();
    let inputs = three_clouds(d.path());
    let out = d.path().join("out");
    let mut args = vec!["certify"];
    args.extend(paths(&inputs[..2]));
    let o = gencol(&args, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("exact optimum"));
    let record = run_json(&out);
    assert_eq!(record["certificate_exhaustive"], true);
    assert_eq!(record["certificate_violations"], 0);
    assert_eq!(record["certificate_checked"], 6);
}

#[test]
fn table_cost_on_a_three_marginal_toy_matches_the_full_lp() {
    let d = TempDir::new().unwrap();
    let inputs = three_clouds(d.path());
    let mut table = String::new();
    let cost = |i: usize, j: usize, k: usize| ((i * 7 + j * 3 + k * 5) % 4) as f64 + 0.5 * (i + k) as f64;
    for i in 0..3 {
        for j in 0..2 {
            for k in 0..3 {
                table.push_str(&format!("{i},{j},{k},{}\n", cost(i, j, k)));
            }
        }
    }
    fs::write(d.path().join("table.csv"), table).unwrap();
    let out = d.path().join("out");
    let spec = format!("table:{}", d.path().join("table.csv").display());
    let mut args = vec!["solve", "--certify", "--cost", &spec];
    args.extend(paths(&inputs));
    let o = gencol(&args, &out);

    use minilp::{ComparisonOp, OptimizationDirection, Problem};
    let masses = [vec![0.3, 0.5, 0.2], vec![0.6, 0.4], vec![0.25, 0.25, 0.5]];
    let mut p = Problem::new(OptimizationDirection::Minimize);
    let mut rows: Vec<Vec<Vec<(minilp::Variable, f64)>>> =
        masses.iter().map(|m| vec![Vec::new(); m.len()]).collect();
    for i in 0..3 {
        for j in 0..2 {
            for k in 0..3 {
                let v = p.add_var(cost(i, j, k), (0.0, f64::INFINITY));
                for (dim, idx) in [i, j, k].into_iter().enumerate() {
                    rows[dim][idx].push((v, 1.0));
                }
            }
        }
    }
    for (dim, m) in masses.iter().enumerate() {
        for (idx, &mass) in m.iter().enumerate() {
            p.add_constraint(rows[dim][idx].as_slice(), ComparisonOp::Eq, mass);
        }
    }
    let optimum = p.solve().unwrap().objective();
    let objective = run_json(&out)["objective"].as_f64().unwrap();
    assert!((objective - optimum).abs() <= 1e-9, "{objective} vs {optimum}");
    assert!(o.status.success());
}

#[test]
fn one_hot_barycenter_returns_the_first_input() {
    let d = TempDir::new().unwrap();
    let inputs = three_clouds(d.path());
    let out = d.path().join("out");
    let mut args = vec!["barycenter", "--weights", "1,0,0"];
    args.extend(paths(&inputs));
    let o = gencol(&args, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cloud = read_rows(&out.join("barycenter.csv"));
    let mut want = read_rows(&inputs[0]);
    let mut got = cloud.clone();
    let key = |a: &Vec<f64>, b: &Vec<f64>| a.partial_cmp(b).unwrap();
    want.sort_by(key);
    got.sort_by(key);
    assert_eq!(got, want);
}

#[test]
fn weight_grid_sweep_writes_one_directory_per_weight() {
    let d = TempDir::new().unwrap();
    let inputs = three_clouds(d.path());
    let out = d.path().join("out");
    let mut args = vec!["barycenter", "--weight-grid", "2", "--refine", "2", "--grid", "4x4"];
    args.extend(paths(&inputs));
    let o = gencol(&args, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut dirs: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("w_"))
        .collect();
    dirs.sort();
    assert_eq!(dirs, ["w_0_0_2", "w_0_1_1", "w_0_2_0", "w_1_0_1", "w_1_1_0", "w_2_0_0"]);
    for name in &dirs {
        assert!(out.join(name).join("barycenter.pgm").exists());
        assert!(out.join(name).join("run.json").exists());
    }
}

#[test]
fn spline_through_diracs_hits_knots_and_classical_points() {
    let d = TempDir::new().unwrap();
    let ys = [0.0, 1.0, 0.0, 2.0];
    let inputs: Vec<PathBuf> = ys
        .iter()
        .enumerate()
        .map(|(i, &y)| write_csv(d.path(), &format!("k{i}.csv"), &[(&[y], 1.0)]))
        .collect();
    let out = d.path().join("out");
    let mut args = vec!["spline", "--query", "0,0.3333333333333333,0.5,1"];
    args.extend(paths(&inputs));
    let o = gencol(&args, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let frame = |i: usize| read_rows(&out.join(format!("frame_{i:03}.csv")));
    assert_eq!(frame(0), vec![vec![0.0, 1.0]]);
    assert_eq!(frame(3), vec![vec![2.0, 1.0]]);
    // Natural spline through (0,0), (1/3,1), (2/3,0), (1,2) with h = 1/3:
    // 4M1 + M2 = 54·(−2) and M1 + 4M2 = 54·3 give M1 = −39.6, M2 = 50.4, and
    // the interval midpoint is the mean knot value minus h²(M1 + M2)/16.
    let mid = 0.5 - (1.0 / 9.0) * (-39.6 + 50.4) / 16.0;
    let f2 = frame(2);
    assert_eq!(f2.len(), 1);
    assert!((f2[0][0] - mid).abs() < 1e-12, "{} vs {mid}", f2[0][0]);
    assert!(stdout(&o).contains("objective"));
}

#[test]
fn sinkhorn_and_ibp_baselines_run() {
    let d = TempDir::new().unwrap();
    let o = gencol(&["sinkhorn", "--epsilon", "0.01"], d.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.path().join("sinkhorn_history.csv").exists());
    assert!(run_json(d.path())["objective"].as_f64().unwrap() > 0.0);

    let inputs = three_clouds(d.path());
    let out = d.path().join("ibp");
    let mut args = vec!["sinkhorn", "--barycenter", "--epsilon", "0.05"];
    args.extend(paths(&inputs));
    let o = gencol(&args, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let total: f64 = read_rows(&out.join("barycenter.csv")).iter().map(|r| r[2]).sum();
    assert!((total - 1.0).abs() < 1e-9);
}

#[test]
fn progress_stream_matches_history() {
    let d = TempDir::new().unwrap();
    let o = gencol(&["demo1d", "--size", "12", "--progress"], d.path());
    assert!(o.status.success());
    assert_eq!(
        fs::read_to_string(d.path().join("progress.csv")).unwrap(),
        fs::read_to_string(d.path().join("history.csv")).unwrap()
    );
}

#[test]
fn input_errors_exit_with_code_two() {
    let d = TempDir::new().unwrap();
    let code = |args: &[&str]| gencol(args, d.path()).status.code();
    assert_eq!(code(&["demo1d", "--no-such-flag"]), Some(2));
    assert_eq!(code(&["solve", "missing.csv", "other.csv"]), Some(2));
    let bad = write_csv(d.path(), "bad.csv", &[(&[0.0], -1.0), (&[1.0], 2.0)]);
    let good = write_csv(d.path(), "good.csv", &[(&[0.0], 1.0)]);
    assert_eq!(code(&["solve", bad.to_str().unwrap(), good.to_str().unwrap()]), Some(2));
    assert_eq!(
        code(&["barycenter", "--weights", "0.5,0.5,0", good.to_str().unwrap(), good.to_str().unwrap()]),
        Some(2)
    );
    assert_eq!(code(&["spline", "--times", "0,0.5,0.5", good.to_str().unwrap(), good.to_str().unwrap(), good.to_str().unwrap()]), Some(2));
}

#[test]
fn solve_limit_without_certificate_exits_with_code_four() {
    let d = TempDir::new().unwrap();
    let o = gencol(&["demo1d", "--size", "30", "--max-solves", "2"], d.path());
    assert_eq!(o.status.code(), Some(4));
    assert_eq!(run_json(d.path())["termination"], "SolveLimit");
}
