use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn rstl() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_rstl"));
    c.env_remove("RSTL_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    rstl().args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}, stderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

/// The single stderr line of a failed command, parsed.
fn error_json(out: &Output) -> Value {
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "stderr: {err}");
    serde_json::from_str(err.trim_end()).expect("stderr is one JSON line")
}

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn constant_scenario(dir: &Path, formula: &str, horizon: usize) -> PathBuf {
    let text = serde_json::json!({
        "schema": 1,
        "name": "constant",
        "horizon": horizon,
        "start": {"x": 0.0, "y": 0.0},
        "formula": formula,
        "predicates": {
            "a": {"kind": "constant", "p": 0.3},
            "b": {"kind": "constant", "p": 0.6},
        },
        "prior": {"sigma_v": 0.5, "sigma_omega": 0.2},
        "synth": {"ns": 2, "nu": 2, "iters": 3, "mc_samples": 200},
        "seed": 11,
    });
    let path = dir.join("constant.json");
    fs::write(&path, text.to_string()).unwrap();
    path
}

fn still_trajectory(dir: &Path, steps: usize) -> PathBuf {
    let mut csv = String::from("t,x,y,theta\n");
    for t in 1..=steps {
        csv.push_str(&format!("{t},0,0,0\n"));
    }
    let path = dir.join(format!("still_{steps}.csv"));
    fs::write(&path, csv).unwrap();
    path
}

#[test]
fn parse_prints_canonical_form() {
    let v = stdout_json(&run(&["parse", "F[0,3](a & b)", "--horizon", "5"]));
    assert_eq!(v["formula"], "(F[0,3] (a & b))");
    assert_eq!(v["predicates"], serde_json::json!(["a", "b"]));
    assert_eq!(v["grounded_leaves"], 8);
}

#[test]
fn parse_error_is_positioned_json() {
    let out = run(&["parse", "a & (b"]);
    assert_eq!(out.status.code(), Some(1));
    let e = error_json(&out);
    assert_eq!(e["error"], "parse");
    let msg = e["message"].as_str().unwrap();
    assert!(msg.starts_with("1:"), "{msg}");
}

#[test]
fn usage_errors_exit_two_and_help_exits_zero() {
    let out = run(&["eval", "--semantics", "fuzzy"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "usage");
    assert!(run(&["--help"]).status.success());
    assert!(run(&["--version"]).status.success());
}

#[test]
fn constant_leaf_is_exact_under_every_semantics() {
    let dir = TempDir::new().unwrap();
    let sc = constant_scenario(dir.path(), "a", 4);
    let traj = still_trajectory(dir.path(), 4);
    for sem in ["naive-ci", "ci", "me"] {
        let v = stdout_json(&run(&[
            "eval",
            "--scenario",
            sc.to_str().unwrap(),
            "--trajectory",
            traj.to_str().unwrap(),
            "--semantics",
            sem,
        ]));
        let p = v["probability"].as_f64().unwrap();
        assert!((p - 0.3).abs() < 1e-12, "{sem}: {p}");
    }
}

#[test]
fn eval_reports_mc_and_rejects_wrong_length() {
    let dir = TempDir::new().unwrap();
    let sc = constant_scenario(dir.path(), "F[0,3] a & F[0,3] b", 4);
    let traj = still_trajectory(dir.path(), 4);
    let v = stdout_json(&run(&[
        "eval",
        "--scenario",
        sc.to_str().unwrap(),
        "--trajectory",
        traj.to_str().unwrap(),
        "--mc-samples",
        "20000",
    ]));
    let ci = v["probability"].as_f64().unwrap();
    let mean = v["mc"]["mean"].as_f64().unwrap();
    let se = v["mc"]["std_err"].as_f64().unwrap();
    assert!((ci - mean).abs() <= 3.0 * se, "{ci} vs {mean} ± {se}");

    let short = still_trajectory(dir.path(), 3);
    let out = run(&[
        "eval",
        "--scenario",
        sc.to_str().unwrap(),
        "--trajectory",
        short.to_str().unwrap(),
    ]);
    assert_eq!(error_json(&out)["error"], "trajectory");
}

#[test]
fn compare_header_only_without_formulas() {
    let dir = TempDir::new().unwrap();
    let sc = constant_scenario(dir.path(), "a", 2);
    let traj = still_trajectory(dir.path(), 2);
    let out = run(&[
        "compare",
        "--scenario",
        sc.to_str().unwrap(),
        "--trajectories",
        traj.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        "trajectory,formula,semantics,estimate,mc_mean,mc_stderr\n"
    );
}

#[test]
fn compare_tautology_row() {
    let dir = TempDir::new().unwrap();
    let sc = constant_scenario(dir.path(), "a", 2);
    let traj = still_trajectory(dir.path(), 2);
    let csv_path = dir.path().join("cmp.csv");
    let out = run(&[
        "compare",
        "--scenario",
        sc.to_str().unwrap(),
        "--trajectories",
        traj.to_str().unwrap(),
        "--formulas",
        "a | !a",
        "--out",
        csv_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = fs::read_to_string(csv_path).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    for row in rows {
        let cols: Vec<&str> = row.rsplitn(4, ',').collect();
        let (se, mc, est) = (cols[0], cols[1], cols[2]);
        assert_eq!(mc.parse::<f64>().unwrap(), 1.0);
        assert_eq!(se.parse::<f64>().unwrap(), 0.0);
        assert!(est.parse::<f64>().unwrap() < 1.0, "{row}");
    }
}

#[test]
fn undeclared_predicate_is_named() {
    let dir = TempDir::new().unwrap();
    let sc = constant_scenario(dir.path(), "a & zed", 2);
    let traj = still_trajectory(dir.path(), 2);
    let out = run(&[
        "eval",
        "--scenario",
        sc.to_str().unwrap(),
        "--trajectory",
        traj.to_str().unwrap(),
    ]);
    let e = error_json(&out);
    assert_eq!(e["error"], "scenario");
    assert!(e["message"].as_str().unwrap().contains("`zed`"), "{e}");
    assert_eq!(e["pointer"], "/formula");
}

fn synth(sc: &Path, out: &Path, extra: &[&str], seed_env: Option<&str>) -> Value {
    let mut cmd = rstl();
    cmd.args(["synth", "--scenario", sc.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .args(extra);
    if let Some(s) = seed_env {
        cmd.env("RSTL_SEED", s);
    }
    stdout_json(&cmd.output().unwrap())
}

fn report(dir: &Path) -> Value {
    let mut v: Value = serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    // timings are the only nondeterministic fields
    v["mean_seconds_per_step"] = Value::Null;
    for r in v["restarts"].as_array_mut().unwrap() {
        r["seconds_per_step"] = Value::Null;
    }
    v
}

#[test]
fn synth_with_zero_iterations_keeps_prior_sample() {
    let dir = TempDir::new().unwrap();
    let sc = constant_scenario(dir.path(), "F[0,3] a", 4);
    let out = dir.path().join("run");
    synth(&sc, &out, &["--iters", "0", "--nu", "3"], None);
    let r = report(&out);
    for restart in r["restarts"].as_array().unwrap() {
        assert_eq!(restart["initial_controls"], restart["controls"]);
        assert_eq!(restart["iterations"], 0);
    }
    let best = r["best_restart"].as_u64().unwrap() as usize;
    assert_eq!(r["best_controls"], r["restarts"][best]["initial_controls"]);
}

#[test]
fn synth_output_files_reparse() {
    let dir = TempDir::new().unwrap();
    let sc = constant_scenario(dir.path(), "F[0,3] a & G[0,3] b", 4);
    let out = dir.path().join("run");
    let summary = synth(&sc, &out, &["--nu", "2", "--iters", "5"], None);
    assert_eq!(summary["final_probabilities"].as_array().unwrap().len(), 2);

    let conv = fs::read_to_string(out.join("convergence.csv")).unwrap();
    let mut lines = conv.lines();
    assert_eq!(lines.next(), Some("iteration,restart,objective,mc_p"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2 * 6);
    for row in &rows {
        assert_eq!(row.len(), 4);
        row[0].parse::<usize>().unwrap();
        row[1].parse::<usize>().unwrap();
        assert!(row[2].parse::<f64>().unwrap().is_finite());
        if !row[3].is_empty() {
            let p = row[3].parse::<f64>().unwrap();
            assert!((0.0..=1.0).contains(&p));
        }
    }

    let controls = fs::read_to_string(out.join("best_controls.csv")).unwrap();
    assert_eq!(controls.lines().next(), Some("t,v,omega"));
    assert_eq!(controls.lines().count(), 5);
    for name in ["restart_000.csv", "restart_001.csv", "best_trajectory.csv"] {
        let text = fs::read_to_string(out.join(name)).unwrap();
        let traj = rstl::dynamics::Trajectory::from_csv_str(&text, 1.0).unwrap();
        assert_eq!(traj.len(), 4);
    }
}

#[test]
fn synth_is_deterministic_and_honours_env_seed() {
    let dir = TempDir::new().unwrap();
    let sc = constant_scenario(dir.path(), "F[0,3] a", 4);
    let args = ["--iters", "4", "--nu", "2", "--ns", "3"];
    let (a, b, c, d) = (
        dir.path().join("a"),
        dir.path().join("b"),
        dir.path().join("c"),
        dir.path().join("d"),
    );
    synth(&sc, &a, &[&args[..], &["--seed", "5"]].concat(), None);
    synth(&sc, &b, &[&args[..], &["--seed", "5"]].concat(), None);
    synth(&sc, &c, &args, Some("5"));
    synth(&sc, &d, &args, None);
    assert_eq!(report(&a), report(&b));
    assert_eq!(report(&a), report(&c));
    assert_ne!(report(&a)["restarts"][0]["initial_controls"], report(&d)["restarts"][0]["initial_controls"]);
    assert_eq!(report(&d)["config"]["seed"], 11);
}

#[test]
fn bad_env_seed_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let sc = constant_scenario(dir.path(), "a", 1);
    let out = rstl()
        .args(["synth", "--scenario", sc.to_str().unwrap(), "--out"])
        .arg(dir.path().join("x"))
        .env("RSTL_SEED", "banana")
        .output()
        .unwrap();
    assert_eq!(error_json(&out)["error"], "usage");
}

#[test]
fn bench_writes_one_row_per_cell() {
    let dir = TempDir::new().unwrap();
    let sc = constant_scenario(dir.path(), "F[0,3] a", 4);
    let out = run(&[
        "bench",
        "--scenario",
        sc.to_str().unwrap(),
        "--ns-list",
        "1,2",
        "--nu-list",
        "1,3",
        "--steps",
        "2",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("ns,nu,workers,mean_seconds,var_seconds"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4);
    for row in rows {
        let cols: Vec<f64> = row.split(',').map(|c| c.parse().unwrap()).collect();
        assert!(cols[3] > 0.0 && cols[4] >= 0.0, "{row}");
    }
}

#[test]
fn bundled_scenarios_load() {
    let dir = TempDir::new().unwrap();
    for (name, expect) in [
        ("tom_and_jerry.json", "F[0,50](tom) & F[0,50](jerry)"),
        ("nursing_phi1.json", "san"),
        ("nursing_phi2.json", "F[0,44] rob & F[0,44] bob"),
    ] {
        let sc = rstl::scenario::Scenario::load(&bundled(name)).unwrap();
        assert!(sc.spec.formula.contains(expect), "{name}");
        let out = dir.path().join(name);
        let s = synth(
            &bundled(name),
            &out,
            &["--iters", "0", "--nu", "1", "--mc-samples", "10"],
            None,
        );
        assert_eq!(s["scenario"], sc.name());
    }
}
