use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const LINEAR: &str = r#"
plant = "linear"
x0 = [1.0]
delay = 0.5
schedule = "sinusoid"
schedule_amplitude = 0.1
d_lower = 0.1
d_upper = 1.5
grid = 20
dt = 0.01
horizon = 3.0
stride = 50
"#;

fn pbk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pbk"))
        .args(args)
        .env_remove("PBK_OUT")
        .output()
        .expect("pbk runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn simulate(text: &str) -> (TempDir, Output) {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "scenario.toml", text);
    let out = dir.path().join("out");
    let res = pbk(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    (dir, res)
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn simulate_writes_one_row_per_step_and_indexes_every_file() {
    let (dir, res) = simulate(LINEAR);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let out = dir.path().join("out");
    let rows = fs::read_to_string(out.join("trajectory.csv")).unwrap().lines().count();
    assert_eq!(rows, 1 + 301);
    let m = manifest(&out);
    assert_eq!(m["status"], "ok");
    let files = m["files"].as_array().unwrap();
    assert!(files.len() > 3);
    for f in files {
        assert!(out.join(f.as_str().unwrap()).is_file(), "{f}");
    }
}

#[test]
fn nonpositive_step_is_a_config_error_naming_the_key() {
    let (_dir, res) = simulate(&LINEAR.replace("dt = 0.01", "dt = -0.01"));
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("`dt`"));
}

#[test]
fn unknown_key_is_a_config_error() {
    let (_dir, res) = simulate(&format!("{LINEAR}\nhorizn = 2.0\n"));
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("horizn"));
}

#[test]
fn unstable_loop_blows_up_and_the_manifest_records_when() {
    let text = LINEAR.replace("delay = 0.5", "delay = 0.5\na = 3.0\ngain = -1.0\nblowup_threshold = 1e3");
    let (dir, res) = simulate(&text);
    assert_eq!(res.status.code(), Some(3));
    let m = manifest(&dir.path().join("out"));
    assert_eq!(m["status"], "blow_up");
    let t = m["failure"]["t"].as_f64().unwrap();
    assert!(t > 0.5 && t < 3.0, "{t}");
    assert_eq!(m["failure"]["kind"], "blow_up");
}

#[test]
fn huge_cubic_state_with_hostile_estimate_blows_up() {
    let text = r#"
plant = "cubic"
x0 = [5.0]
delay = 0.5
schedule = "sinusoid"
schedule_base = 3.0
schedule_amplitude = 0.9
schedule_frequency = 3.0
grid = 20
dt = 0.005
horizon = 5.0
"#;
    let (dir, res) = simulate(text);
    assert_eq!(res.status.code(), Some(3));
    let m = manifest(&dir.path().join("out"));
    assert_eq!(m["failure"]["t"].as_f64(), Some(0.0));
    assert_eq!(m["failure"]["state"][0].as_f64(), Some(5.0));
}

#[test]
fn divergent_control_fixed_point_is_a_numeric_failure() {
    let (dir, res) = simulate(&LINEAR.replace("delay = 0.5", "delay = 0.5\nb = 1000.0"));
    assert_eq!(res.status.code(), Some(4));
    assert_eq!(manifest(&dir.path().join("out"))["status"], "numeric_failure");
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "scenario.toml", LINEAR);
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let res = pbk(&["simulate", "--config", &cfg, "--out", blocker.join("out").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn repeated_runs_are_bit_identical() {
    let (a, ra) = simulate(LINEAR);
    let (b, rb) = simulate(LINEAR);
    assert_eq!(ra.status.code(), Some(0));
    assert_eq!(rb.status.code(), Some(0));
    let files = manifest(&a.path().join("out"))["files"].clone();
    let mut csvs = 0;
    for f in files.as_array().unwrap() {
        let f = f.as_str().unwrap();
        if f.ends_with(".csv") {
            csvs += 1;
            let x = fs::read(a.path().join("out").join(f)).unwrap();
            let y = fs::read(b.path().join("out").join(f)).unwrap();
            assert!(x == y, "{f} differs");
        }
    }
    assert!(csvs > 2);
}

#[test]
fn output_root_defaults_to_the_environment() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "scenario.toml", LINEAR);
    let out = dir.path().join("from_env");
    let res = Command::new(env!("CARGO_BIN_EXE_pbk"))
        .args(["simulate", "--config", &cfg])
        .env("PBK_OUT", &out)
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(0));
    assert!(out.join("trajectory.csv").is_file());
}

#[test]
fn verify_needs_three_rungs() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "scenario.toml", LINEAR);
    let out = dir.path().join("out");
    let res = pbk(&["verify", "--config", &cfg, "--ladder", "50", "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("ladder"));
}

#[test]
fn verify_at_equilibrium_reports_exact_residuals() {
    let dir = TempDir::new().unwrap();
    let text = LINEAR.replace("x0 = [1.0]", "x0 = [0.0]").replace("horizon = 3.0", "horizon = 4.0");
    let cfg = write_config(dir.path(), "scenario.toml", &text);
    let out = dir.path().join("out");
    let res = pbk(&["verify", "--config", &cfg, "--ladder", "10,20,40", "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stdout));
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("residual_report.json")).unwrap()).unwrap();
    for eq in report["equations"].as_array().unwrap() {
        assert_eq!(eq["order"]["kind"], "exact", "{}", eq["name"]);
    }
    assert_eq!(manifest(&out)["rungs"].as_array().unwrap().len(), 3);
    let rows = fs::read_to_string(out.join("convergence.csv")).unwrap().lines().count();
    assert_eq!(rows, 4);
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "scenario.toml", LINEAR);
    let out = dir.path().join("sweep");
    let res = pbk(&[
        "sweep",
        "--config",
        &cfg,
        "--grid",
        "delay=0.4,0.5,0.6;schedule_amplitude=0.0,0.05,0.1",
        "--workers",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let table = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 9);
    for i in 0..9 {
        assert!(out.join(format!("cell_{i:03}")).join("trajectory.csv").is_file());
    }
}

#[test]
fn sweep_flags_the_failing_cell_and_exits_with_the_worst_code() {
    let dir = TempDir::new().unwrap();
    let text = LINEAR.replace("delay = 0.5", "delay = 0.5\na = 3.0\nblowup_threshold = 1e3");
    let cfg = write_config(dir.path(), "scenario.toml", &text);
    let out = dir.path().join("sweep");
    let res = pbk(&["sweep", "--config", &cfg, "--grid", "gain=4.0,-1.0", "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(3));
    let mut rows = csv::Reader::from_path(out.join("sweep.csv")).unwrap();
    let headers = rows.headers().unwrap().clone();
    let status = headers.iter().position(|h| h == "status").unwrap();
    let statuses: Vec<String> = rows.records().map(|r| r.unwrap()[status].to_string()).collect();
    assert_eq!(statuses, ["ok", "blow_up"]);
}

#[test]
fn single_cell_sweep_matches_simulate() {
    let (sim_dir, res) = simulate(LINEAR);
    assert_eq!(res.status.code(), Some(0));
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "scenario.toml", LINEAR);
    let out = dir.path().join("sweep");
    let res = pbk(&["sweep", "--config", &cfg, "--grid", "delay=0.5", "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0));
    let a = fs::read(sim_dir.path().join("out/trajectory.csv")).unwrap();
    let b = fs::read(out.join("cell_000/trajectory.csv")).unwrap();
    assert!(a == b);
}
