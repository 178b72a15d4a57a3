use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

use sparsectl::models::converter;

fn sparsectl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparsectl"))
        .args(args)
        .current_dir(cwd)
        .env_remove("SPARSECTL_THREADS")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn check_reports_a_n() {
    let dir = tempfile::tempdir().unwrap();
    let out = sparsectl(&["check", "builtin:converter"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    // Oracle: ‖(I − UUᵀ)A‖ with U an orthonormal basis of range(B).
    let p = converter();
    let u = p.b().clone().svd(true, false).u.unwrap();
    let oracle = (p.a() - &u * u.tr_mul(p.a())).singular_values().max();
    let line = stdout(&out).lines().find(|l| l.starts_with("a_n")).unwrap().to_string();
    let printed: f64 = line.split_whitespace().last().unwrap().parse().unwrap();
    assert!((printed - oracle).abs() < 1e-12);
}

#[test]
fn check_rank_deficient_and_missing() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("flat.json"),
        r#"{ "n": 2, "m": 2, "A": [1, 0, 0, 1], "B": [1, 2, 1, 2] }"#,
    )
    .unwrap();
    let out = sparsectl(&["check", "flat.json"], dir.path());
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("Assumption 1 violated"));

    let out = sparsectl(&["check", "missing.json"], dir.path());
    assert_eq!(code(&out), 2);
    let out = sparsectl(&["check", "builtin:nothing"], dir.path());
    assert_eq!(code(&out), 2);
}

#[test]
fn synth_writes_plan_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = sparsectl(&["synth", "builtin:converter", "--delta", "0.01", "--out", "p/plan.json"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let plan = read_json(&dir.path().join("p/plan.json"));
    let p_star = plan["p_star"].as_f64().unwrap();
    assert!((p_star - 0.79).abs() <= 0.06, "p_star = {p_star}");
    assert_eq!(plan["mode"], "uniform");
    assert_eq!(plan["K"].as_array().unwrap().len(), 6);
    assert!(plan["contraction"].as_f64().unwrap() < 1.0);
    assert_eq!(plan["manifest"], "p/plan.manifest.json");

    let manifest = read_json(&dir.path().join("p/plan.manifest.json"));
    assert_eq!(manifest["config"]["delta"], 0.01);
    assert_eq!(manifest["config"]["p_floor"], 1e-4);
    assert_eq!(manifest["config"]["epsilon_p"], 1e-4);
    assert_eq!(manifest["outputs"][0], "p/plan.json");
    assert_eq!(manifest["model"]["fingerprint"], plan["plant_hash"]);
}

#[test]
fn synth_adaptive_profile() {
    let dir = tempfile::tempdir().unwrap();
    let out = sparsectl(&["synth", "builtin:converter", "--adaptive", "--out", "a.json"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let plan = read_json(&dir.path().join("a.json"));
    let p: Vec<f64> = plan["p_vec"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    for (got, want) in p.iter().zip([0.026, 0.026, 0.794]) {
        assert!((got - want).abs() <= 0.08, "p_vec = {p:?}");
    }

    let out = sparsectl(&["synth", "builtin:converter", "--weights", "1,1,1"], dir.path());
    assert_eq!(code(&out), 2);
}

#[test]
fn synth_unstable_projection_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("p.json"),
        r#"{ "n": 2, "m": 1, "A": [1, 0, 0, 1.5], "B": [1, 0], "name": "hard" }"#,
    )
    .unwrap();
    let out = sparsectl(&["synth", "p.json"], dir.path());
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("Assumption 2 violated"));
}

#[test]
fn simulate_verdicts_and_outputs() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&sparsectl(&["synth", "builtin:converter", "--out", "plan.json"], dir.path())), 0);

    let out = sparsectl(&["simulate", "builtin:converter", "--plan", "plan.json", "--out", "star.csv"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary = read_json(&dir.path().join("star.summary.json"));
    assert_eq!(summary["verdict"], "converged");
    assert_eq!(summary["manifest"], "star.manifest.json");
    let manifest = read_json(&dir.path().join("star.manifest.json"));
    assert_eq!(manifest["config"]["runs"], 100);
    assert_eq!(manifest["config"]["steps"], 200);
    assert_eq!(manifest["config"]["sigma"], 100.0);
    assert_eq!(manifest["outputs"][0], "star.csv");
    let csv = std::fs::read_to_string(dir.path().join("star.csv")).unwrap();
    assert_eq!(csv.lines().count(), 202);
    assert_eq!(csv.lines().next().unwrap(), "k,mean_sq_norm,std_sq_norm,active_sensors_mean");

    let out = sparsectl(
        &["simulate", "builtin:converter", "--plan", "plan.json", "--p", "0.4", "--out", "low.csv"],
        dir.path(),
    );
    assert_eq!(code(&out), 1);
    assert_eq!(read_json(&dir.path().join("low.summary.json"))["verdict"], "diverged");
}

#[test]
fn single_full_run_is_the_plain_recursion() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&sparsectl(&["synth", "builtin:converter", "--out", "plan.json"], dir.path())), 0);
    let out = sparsectl(
        &[
            "simulate", "builtin:converter", "--plan", "plan.json", "--p", "1", "--runs", "1", "--steps", "15",
            "--seed", "5", "--record", "0,1,2", "--out", "one.csv",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let plant = converter();
    let plan = read_json(&dir.path().join("plan.json"));
    let k: Vec<f64> = plan["K"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let gain = nalgebra::DMatrix::from_row_slice(2, 3, &k);
    let d = plant.a() + plant.b() * gain;
    let mut x = sparsectl::sim::initial_state(3, 100.0, 5, 0);
    let csv = std::fs::read_to_string(dir.path().join("one.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        let scale = x.norm().max(1e-300);
        for i in 0..3 {
            assert!((cols[4 + i] - x[i]).abs() <= 1e-12 * scale, "{line} vs {x}");
        }
        assert!((cols[1] - x.norm_squared()).abs() <= 1e-12 * scale * scale);
        assert_eq!(cols[2], 0.0);
        assert_eq!(cols[3], 3.0);
        x = &d * x;
    }
}

#[test]
fn plan_for_another_plant_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&sparsectl(&["synth", "builtin:chain?N=2", "--out", "plan.json"], dir.path())), 0);
    let out = sparsectl(&["simulate", "builtin:converter", "--plan", "plan.json"], dir.path());
    assert_eq!(code(&out), 1);
    let out = sparsectl(&["simulate", "builtin:chain?N=2", "--plan", "nope.json"], dir.path());
    assert_eq!(code(&out), 2);
}

#[test]
fn sweep_outputs_and_dedup() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&sparsectl(&["synth", "builtin:converter", "--out", "plan.json"], dir.path())), 0);
    let out = sparsectl(
        &[
            "sweep", "builtin:converter", "--plan", "plan.json", "--p-list", "pstar,0.4,1,0.4", "--runs", "50",
            "--steps", "60", "--out-dir", "sw",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stderr(&out).contains("duplicate"));
    let summary = read_json(&dir.path().join("sw/summary.json"));
    let entries = summary["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 3);
    assert_eq!(entries[0]["verdict"], "converged");
    assert_eq!(entries[1]["verdict"], "diverged");
    assert_eq!(entries[2]["verdict"], "converged");
    for e in entries {
        assert!(dir.path().join("sw").join(Path::new(e["csv"].as_str().unwrap()).file_name().unwrap()).exists());
    }
    // Common random numbers: every curve starts from the same states.
    let first_rows: Vec<String> = entries
        .iter()
        .map(|e| {
            let text = std::fs::read_to_string(dir.path().join(e["csv"].as_str().unwrap())).unwrap();
            text.lines().nth(1).unwrap().split(',').nth(1).unwrap().to_string()
        })
        .collect();
    assert!(first_rows.iter().all(|r| r == &first_rows[0]));

    let out = sparsectl(&["sweep", "builtin:converter", "--plan", "plan.json", "--p-list", ""], dir.path());
    assert_eq!(code(&out), 2);
    let out = sparsectl(&["sweep", "builtin:converter", "--plan", "plan.json"], dir.path());
    assert_eq!(code(&out), 2);
}

#[test]
fn thread_env_variable_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&sparsectl(&["synth", "builtin:converter", "--out", "plan.json"], dir.path())), 0);
    let mut csvs = Vec::new();
    for threads in ["1", "3"] {
        let name = format!("t{threads}.csv");
        let out = Command::new(env!("CARGO_BIN_EXE_sparsectl"))
            .args(["simulate", "builtin:converter", "--plan", "plan.json", "--runs", "257", "--seed", "9", "--out", &name])
            .env("SPARSECTL_THREADS", threads)
            .current_dir(dir.path())
            .output()
            .unwrap();
        assert_eq!(code(&out), 0);
        csvs.push(std::fs::read(dir.path().join(&name)).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
}
