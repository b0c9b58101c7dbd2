use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn nomperf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nomperf"))
        .args(args)
        .env_remove("NOMPERF_CONFIG_DIR")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL_SCENARIO: &str = "version = 1\nn_runs = 4\nduration = 200.0\nseed = 3\n";

/// Writes a small scenario, generates it and trains a small model.
/// Returns (tmp, data dir, model path).
fn small_setup() -> (TempDir, PathBuf, PathBuf) {
    let tmp = TempDir::new().unwrap();
    let scen = tmp.path().join("scenario.toml");
    std::fs::write(&scen, SMALL_SCENARIO).unwrap();
    let data = tmp.path().join("data");
    let o = nomperf(&["generate", "--scenario", p(&scen), "--out", p(&data)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let model = tmp.path().join("model.txt");
    let o = nomperf(&[
        "train", "--data", p(&data), "--out", p(&model), "--hidden", "12", "--cycles", "400",
        "--holdout", "run_003",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    (tmp, data, model)
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&nomperf(&["--help"])), 0);
    assert_eq!(code(&nomperf(&["train", "--bogus"])), 1);
    assert_eq!(code(&nomperf(&[])), 1);
}

#[test]
fn generate_canonical_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let o = nomperf(&["generate", "--out", p(dir), "--seed", "42"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let csvs = std::fs::read_dir(&a)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "csv"))
        .count();
    assert_eq!(csvs, 20);
    let ma = std::fs::read(a.join("manifest.json")).unwrap();
    assert_eq!(ma, std::fs::read(b.join("manifest.json")).unwrap());
    assert_eq!(
        std::fs::read(a.join("run_007.csv")).unwrap(),
        std::fs::read(b.join("run_007.csv")).unwrap()
    );
}

#[test]
fn generate_zero_runs_writes_empty_manifest() {
    let tmp = TempDir::new().unwrap();
    let scen = tmp.path().join("s.toml");
    std::fs::write(&scen, "version = 1\nn_runs = 0\n").unwrap();
    let out = tmp.path().join("out");
    let o = nomperf(&["generate", "--scenario", p(&scen), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["runs"].as_array().unwrap().len(), 0);
}

#[test]
fn malformed_scenario_reports_line() {
    let tmp = TempDir::new().unwrap();
    let scen = tmp.path().join("s.toml");
    std::fs::write(&scen, "version = 1\nn_runs = 3\ntau_v = \"slow\"\n").unwrap();
    let o = nomperf(&["generate", "--scenario", p(&scen), "--out", p(&tmp.path().join("o"))]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn config_dir_env_supplies_default_scenario() {
    let tmp = TempDir::new().unwrap();
    std::fs::write(tmp.path().join("scenario.toml"), "version = 1\nn_runs = 2\nduration = 30.0\n").unwrap();
    let out = tmp.path().join("out");
    let o = Command::new(env!("CARGO_BIN_EXE_nomperf"))
        .args(["generate", "--out", p(&out)])
        .env("NOMPERF_CONFIG_DIR", tmp.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.join("run_001.csv").exists());
    assert!(!out.join("run_002.csv").exists());
}

#[test]
fn train_on_empty_dir_is_usage_error() {
    let tmp = TempDir::new().unwrap();
    let o = nomperf(&["train", "--data", p(tmp.path()), "--out", p(&tmp.path().join("m"))]);
    assert_eq!(code(&o), 1);
}

#[test]
fn sgd_divergence_exits_2_with_trace() {
    let tmp = TempDir::new().unwrap();
    let scen = tmp.path().join("s.toml");
    std::fs::write(&scen, "version = 1\nn_runs = 2\nduration = 40.0\n").unwrap();
    let data = tmp.path().join("d");
    assert_eq!(code(&nomperf(&["generate", "--scenario", p(&scen), "--out", p(&data)])), 0);
    let cfg = tmp.path().join("train.toml");
    std::fs::write(&cfg, "version = 1\noptimizer = \"sgd\"\n[sgd]\nlearning_rate = 1e6\n").unwrap();
    let model = tmp.path().join("m");
    let o = nomperf(&[
        "train", "--data", p(&data), "--config", p(&cfg), "--out", p(&model), "--hidden", "4",
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("cycle,error,grad_norm"));
    assert!(!model.exists());
}

#[test]
fn train_is_byte_identical_and_pipeline_runs_end_to_end() {
    let (tmp, data, model) = small_setup();
    let again = tmp.path().join("again.txt");
    let o = nomperf(&[
        "train", "--data", p(&data), "--out", p(&again), "--hidden", "12", "--cycles", "400",
        "--holdout", "run_003",
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read(&model).unwrap(), std::fs::read(&again).unwrap());

    let run = data.join("run_003.csv");
    let report = tmp.path().join("report.json");
    let flags = tmp.path().join("flags.csv");
    let o = nomperf(&[
        "evaluate", "--model", p(&model), "--run", p(&run), "--data", p(&data), "--out",
        p(&report), "--flags", p(&flags),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    let methods: Vec<&str> = r["methods"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m["method"].as_str().unwrap())
        .collect();
    assert_eq!(methods, ["ann", "setpoint", "speed_average"]);

    let report2 = tmp.path().join("report2.json");
    nomperf(&[
        "evaluate", "--model", p(&model), "--run", p(&run), "--data", p(&data), "--out",
        p(&report2),
    ]);
    assert_eq!(std::fs::read(&report).unwrap(), std::fs::read(&report2).unwrap());

    let flags2 = tmp.path().join("flags2.csv");
    let o = nomperf(&["flag", "--report", p(&report), "--model", p(&model), "--out", p(&flags2)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(std::fs::read_to_string(&flags2).unwrap().starts_with("start_idx,end_idx,peak_residual"));

    let prefix = tmp.path().join("fig");
    let o = nomperf(&["plot", "--report", p(&report), "--out", p(&prefix)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for suffix in ["overlay.svg", "overlay.csv", "accumulated.svg", "accumulated.csv"] {
        assert!(tmp.path().join(format!("fig_{suffix}")).exists(), "{suffix}");
    }
    let acc = std::fs::read_to_string(tmp.path().join("fig_accumulated.csv")).unwrap();
    let ann_col: Vec<f64> = acc
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    let ann_json: Vec<f64> = r["methods"][0]["accumulated"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(ann_col, ann_json);
}

#[test]
fn predict_from_profile_with_forecast_and_recorded() {
    let (tmp, data, model) = small_setup();
    let profile = tmp.path().join("profile.csv");
    std::fs::write(&profile, "# duration=200\nt,cmd_speed\n0,0.4\n50,0.8\n120,0.6\n").unwrap();
    let out = tmp.path().join("pred.csv");
    let o = nomperf(&[
        "predict", "--model", p(&model), "--profile", p(&profile), "--util", "forecast", "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 201);
    assert!(text.starts_with("t,cmd_speed,predicted_speed,utilization"));

    let o = nomperf(&[
        "predict", "--model", p(&model), "--profile", p(&profile), "--utilization",
        p(&data.join("run_000.csv")), "--out", p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    // A recorded series of the wrong length is a data error.
    std::fs::write(&profile, "# duration=150\nt,cmd_speed\n0,0.4\n").unwrap();
    let o = nomperf(&[
        "predict", "--model", p(&model), "--profile", p(&profile), "--utilization",
        p(&data.join("run_000.csv")), "--out", p(&out),
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn corrupted_model_is_rejected() {
    let (tmp, data, model) = small_setup();
    let mut bytes = std::fs::read(&model).unwrap();
    let i = bytes.len() / 2;
    bytes[i] = if bytes[i] == b'3' { b'4' } else { b'3' };
    std::fs::write(&model, bytes).unwrap();
    let o = nomperf(&[
        "evaluate", "--model", p(&model), "--run", p(&data.join("run_003.csv")), "--out",
        p(&tmp.path().join("r.json")),
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("checksum"));
}

fn write_run(path: &Path, rows: &[(f64, f64, f64)]) {
    let mut s = String::from("t,cmd_speed,actual_speed,utilization\n");
    for (i, (c, a, u)) in rows.iter().enumerate() {
        s.push_str(&format!("{i},{c},{a},{u}\n"));
    }
    std::fs::write(path, s).unwrap();
}

#[test]
fn setpoint_on_perfect_tracking_run_is_zero() {
    let (tmp, _data, model) = small_setup();
    let run = tmp.path().join("perfect.csv");
    let rows: Vec<_> = (0..80)
        .map(|i| {
            let c = if i < 40 { 0.4 } else { 0.6 };
            (c, c, i as f64 * 0.001)
        })
        .collect();
    write_run(&run, &rows);
    let report = tmp.path().join("r.json");
    let o = nomperf(&["evaluate", "--model", p(&model), "--run", p(&run), "--out", p(&report)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    let setpoint = r["methods"]
        .as_array()
        .unwrap()
        .iter()
        .find(|m| m["method"] == "setpoint")
        .unwrap();
    assert_eq!(setpoint["summary"]["final_accumulated"].as_f64(), Some(0.0));
}

#[test]
fn injected_fault_window_is_flagged() {
    let (tmp, data, model) = small_setup();
    let text = std::fs::read_to_string(data.join("run_003.csv")).unwrap();
    let mut rows: Vec<(f64, f64, f64)> = text
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<f64> = l.split(',').map(|v| v.parse().unwrap()).collect();
            (f[1], f[2], f[3])
        })
        .collect();
    let std: f64 = std::fs::read_to_string(&model)
        .unwrap()
        .lines()
        .find_map(|l| l.strip_prefix("residual_std "))
        .unwrap()
        .parse()
        .unwrap();
    let (start, end) = (80usize, 130usize);
    for r in &mut rows[start..end] {
        r.1 += 6.0 * std;
    }
    let faulty = tmp.path().join("faulty.csv");
    write_run(&faulty, &rows);
    let flags = tmp.path().join("flags.csv");
    let o = nomperf(&[
        "evaluate", "--model", p(&model), "--run", p(&faulty), "--out",
        p(&tmp.path().join("r.json")), "--flags", p(&flags), "--window", "10",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let lines: Vec<String> = std::fs::read_to_string(&flags)
        .unwrap()
        .lines()
        .skip(1)
        .map(String::from)
        .collect();
    assert_eq!(lines.len(), 1, "{lines:?}");
    let f: Vec<f64> = lines[0].split(',').map(|v| v.parse().unwrap()).collect();
    let (s, e) = (f[0] as usize, f[1] as usize);
    assert!(s.abs_diff(start) <= 10 && e.abs_diff(end - 1) <= 10, "{s}..{e}");
}

#[test]
fn plot_of_empty_report_writes_nothing() {
    let tmp = TempDir::new().unwrap();
    let report = tmp.path().join("r.json");
    std::fs::write(
        &report,
        r#"{"version":1,"run_id":"x","t":[],"cmd_speed":[],"actual_speed":[],"methods":[],"residual_stats":null,"flag_policy":null,"flags":[]}"#,
    )
    .unwrap();
    let prefix = tmp.path().join("fig");
    let o = nomperf(&["plot", "--report", p(&report), "--out", p(&prefix)]);
    assert_eq!(code(&o), 1);
    assert_eq!(std::fs::read_dir(tmp.path()).unwrap().count(), 1);
}
