use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;
use waterline_cli::solve::ResultFile;

fn waterline(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_waterline"))
        .args(args)
        .env_remove("WATERLINE_SEED")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn powers(result: &str) -> Vec<f64> {
    let v: Value = serde_json::from_str(result).unwrap();
    v["powers"].as_array().unwrap().iter().map(|p| p.as_f64().unwrap()).collect()
}

fn close(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-9)
}

const P1: &str = r#"{
  "problem_class": "p1",
  "budget": 2.0,
  "objectives": [
    {"family": "log_capacity", "w": 1.0, "a": 1.0, "b": 1.0},
    {"family": "log_capacity", "w": 1.0, "a": 1.0, "b": 1.0}
  ]
}"#;

fn boxed(k: usize) -> String {
    let objectives = vec![r#"{"family": "log_capacity", "w": 1.0, "a": 1.0, "b": 1.0}"#; k].join(", ");
    let mut upper = vec!["3.0".to_string(); k];
    upper[0] = "1.0".into();
    format!(
        r#"{{"problem_class": "box", "budget": {}, "objectives": [{objectives}], "lower": [{}], "upper": [{}]}}"#,
        2.0 * k as f64,
        vec!["0.0"; k].join(", "),
        upper.join(", ")
    )
}

#[test]
fn solve_writes_equal_split() {
    let dir = TempDir::new().unwrap();
    let instance = write(dir.path(), "p1.json", P1);
    let out = waterline(&["solve", &instance]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(close(&powers(&text), &[1.0, 1.0]));
    let v: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["status"], "optimal");
    assert_eq!(v["conditions"]["passed"], true);
}

#[test]
fn solve_box_with_every_strategy() {
    let dir = TempDir::new().unwrap();
    let instance = write(dir.path(), "box.json", &boxed(3));
    for strategy in ["set_based_a", "set_based_b", "bisection", "order_based"] {
        let out = waterline(&["solve", &instance, "--strategy", strategy]);
        assert!(out.status.success(), "{strategy}: {}", stderr(&out));
        assert!(close(&powers(&stdout(&out)), &[1.0, 2.5, 2.5]), "{strategy}");
    }
}

#[test]
fn misspelled_family_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let instance = write(dir.path(), "bad.json", &P1.replacen("log_capacity", "log_capacty", 1));
    let out = waterline(&["solve", &instance]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("objectives[0]") && err.contains("log_capacty"), "{err}");
}

#[test]
fn unknown_field_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let instance = write(dir.path(), "bad.json", &P1.replacen("\"budget\"", "\"budgett\"", 1));
    let out = waterline(&["solve", &instance]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("budgett"));
}

#[test]
fn infeasible_lower_bounds_exit_one() {
    let dir = TempDir::new().unwrap();
    let text = r#"{"problem_class": "p1_lower", "budget": 1.0, "lower": [0.8, 0.8],
        "objectives": [{"family": "log_capacity", "w": 1, "a": 1, "b": 1}, {"family": "log_capacity", "w": 1, "a": 1, "b": 1}]}"#;
    let instance = write(dir.path(), "infeasible.json", text);
    assert_eq!(waterline(&["solve", &instance]).status.code(), Some(1));
}

#[test]
fn verify_accepts_solver_output_and_rejects_uniform() {
    let dir = TempDir::new().unwrap();
    let instance = write(dir.path(), "box.json", &boxed(3));
    let result = dir.path().join("result.json");
    let out = waterline(&["solve", &instance, "--out", result.to_str().unwrap()]);
    assert!(out.status.success());
    let ok = waterline(&["verify", &instance, result.to_str().unwrap()]);
    assert!(ok.status.success(), "{}", stdout(&ok));
    assert!(stdout(&ok).contains("conditions: PASS"));

    let mut v: Value = serde_json::from_str(&fs::read_to_string(&result).unwrap()).unwrap();
    v["powers"] = serde_json::json!([1.0, 1.0, 1.0]);
    let tampered = write(dir.path(), "uniform.json", &v.to_string());
    let bad = waterline(&["verify", &instance, &tampered]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(stdout(&bad).contains("conditions: FAIL"));
}

#[test]
fn result_file_round_trips() {
    let dir = TempDir::new().unwrap();
    let instance = write(dir.path(), "box.json", &boxed(4));
    let out = waterline(&["solve", &instance]);
    let text = stdout(&out);
    let parsed: ResultFile = serde_json::from_str(&text).unwrap();
    let again: ResultFile = serde_json::from_str(&serde_json::to_string(&parsed).unwrap()).unwrap();
    assert_eq!(parsed, again);
    assert!(text.contains("e0"), "floats are written in full precision");
}

#[test]
fn compare_lists_strategies_and_oracle() {
    let dir = TempDir::new().unwrap();
    let instance = write(dir.path(), "box.json", &boxed(3));
    let out = waterline(&["compare", &instance]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = stdout(&out);
    let names: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["bisection", "order_based", "set_based_a", "set_based_b", "oracle"]);
    assert!(csv.lines().last().unwrap().contains("certified"));

    let large = write(dir.path(), "large.json", &boxed(10));
    let out = waterline(&["compare", &large]);
    assert!(out.status.success());
    assert!(stdout(&out).lines().last().unwrap().contains("out_of_range"));
}

#[test]
fn generate_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let args = |out: &str| {
        waterline(&["generate", "--subcarriers", "4", "--realizations", "2", "--seed", "11", "--out-dir", out])
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(args(a.to_str().unwrap()).status.success());
    assert!(args(b.to_str().unwrap()).status.success());
    for name in ["realization_0000.json", "realization_0001.json"] {
        let (x, y) = (fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap());
        assert_eq!(x, y, "{name}");
    }
    assert_ne!(fs::read(a.join("realization_0000.json")).unwrap(), fs::read(a.join("realization_0001.json")).unwrap());
    let solved = waterline(&["solve", a.join("realization_0000.json").to_str().unwrap()]);
    assert!(solved.status.success(), "{}", stderr(&solved));
}

#[test]
fn seed_variable_overrides_flag() {
    let dir = TempDir::new().unwrap();
    let run = |out: &Path, seed: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_waterline"));
        cmd.args(["generate", "--subcarriers", "2", "--seed", "1", "--out-dir", out.to_str().unwrap()]);
        match seed {
            Some(s) => cmd.env("WATERLINE_SEED", s),
            None => cmd.env_remove("WATERLINE_SEED"),
        };
        assert!(cmd.output().unwrap().status.success());
        fs::read(out.join("realization_0000.json")).unwrap()
    };
    let plain = run(&dir.path().join("plain"), None);
    let same = run(&dir.path().join("same"), Some("1"));
    let other = run(&dir.path().join("other"), Some("2"));
    assert_eq!(plain, same);
    assert_ne!(plain, other);
}

#[test]
fn pinned_boxes_give_uniform_allocation() {
    let dir = TempDir::new().unwrap();
    let points = dir.path().join("points.csv");
    let dump = dir.path().join("dump.csv");
    let out = waterline(&[
        "sweep",
        "--subcarriers",
        "4",
        "--realizations",
        "3",
        "--gamma",
        "1",
        "--tau",
        "1",
        "--snr-list",
        "0,10",
        "--out",
        points.to_str().unwrap(),
        "--dump",
        dump.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(&points).unwrap();
    assert!(text.starts_with("snr_db,gamma,tau,mean_mse"));
    assert_eq!(text.lines().count(), 3);
    let mut reader = csv::Reader::from_path(&dump).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 16);
    let first: f64 = rows[0][3].parse().unwrap();
    for r in &rows {
        let p: f64 = r[3].parse().unwrap();
        assert!((p - first).abs() < 1e-12, "{p} vs {first}");
    }
}

#[test]
fn invalid_scenario_is_an_input_error() {
    let out = waterline(&["sweep", "--antennas", "0"]);
    assert_eq!(out.status.code(), Some(1));
}
