//! End-to-end runs of the `flexenv` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use flexenv::EnvelopeSeries;
use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures").join(name)
}

fn golden(name: &str) -> String {
    fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden").join(name)).unwrap()
}

/// Writes `config` into a fresh directory and returns both.
fn setup(config: Value) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    (dir, path)
}

fn flexenv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flexenv")).args(args).output().unwrap()
}

fn run(cmd: &str, config: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", config.to_str().unwrap()];
    args.extend_from_slice(extra);
    flexenv(&args)
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

fn swiss_config(kinds: &[&str]) -> Value {
    serde_json::json!({
        "units": { "time": "s", "power": "W", "energy": "J", "temperature": "degC" },
        "model": fixture("swiss_house_system.json"),
        "ambient": { "source": "constant", "value_C": 10.0 },
        "dt_s": 900.0,
        "horizon_s": 86400.0,
        "kinds": kinds,
        "seeds": { "start": 7, "count": 60 },
        "out_dir": "out"
    })
}

fn data_rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().skip(2).filter(|l| !l.is_empty()).count()
}

#[test]
fn validate_accepts_swiss_house() {
    let (_dir, cfg) = setup(swiss_config(&["TD"]));
    let out = run("validate", &cfg, &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["valid"], true);
}

#[test]
fn validate_accepts_rc_network_file() {
    let mut config = swiss_config(&["TD"]);
    config["model"] = Value::from(fixture("swiss_house_rc.json").to_str().unwrap());
    let (_dir, cfg) = setup(config);
    assert_eq!(code(&run("validate", &cfg, &[])), 0);
}

#[test]
fn validate_reports_positive_diagonal() {
    let mut config = swiss_config(&["TD"]);
    config["model"] = Value::from(fixture("positive_diagonal.json").to_str().unwrap());
    let (_dir, cfg) = setup(config);
    let out = run("validate", &cfg, &[]);
    assert_eq!(code(&out), 3);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("(1,1)"), "{text}");
    let report: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(report["violations"][0]["kind"], "positive_diagonal");
    assert_eq!(report["violations"][0]["i"], 1);
}

#[test]
fn malformed_model_is_a_schema_error() {
    let mut config = swiss_config(&["TD"]);
    config["model"] = Value::from(fixture("malformed.json").to_str().unwrap());
    let (_dir, cfg) = setup(config);
    assert_eq!(code(&run("validate", &cfg, &[])), 2);
}

#[test]
fn malformed_config_and_bad_flags_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, "{ \"dt_s\": ").unwrap();
    assert_eq!(code(&run("envelope", &cfg, &[])), 2);
    assert_eq!(code(&flexenv(&["envelope"])), 2);
    let (_d, cfg) = setup(swiss_config(&["TD"]));
    assert_eq!(code(&run("envelope", &cfg, &["--kinds", "TI_bogus"])), 2);
    assert_eq!(code(&run("envelope", &cfg, &["--scheme", "rk4"])), 2);
}

#[test]
fn envelope_writes_nested_td_and_ti_csvs() {
    let (dir, cfg) = setup(swiss_config(&["TD", "TI_scalar"]));
    let out = run("envelope", &cfg, &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out_dir = dir.path().join("out");
    assert_eq!(data_rows(&out_dir.join("td.csv")), 97);
    assert_eq!(data_rows(&out_dir.join("ti_scalar.csv")), 97);
    let td = EnvelopeSeries::from_csv_file(&out_dir.join("td.csv")).unwrap();
    let ti = EnvelopeSeries::from_csv_file(&out_dir.join("ti_scalar.csv")).unwrap();
    for k in 0..=96 {
        assert!(ti.e_up[k] <= td.e_up[k] + 1e-6 && ti.e_down[k] >= td.e_down[k] - 1e-6, "row {k}");
    }
    let summary: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["envelopes"].as_array().unwrap().len(), 2);
    assert_eq!(summary["steps"], 96);
}

#[test]
fn envelope_csv_schema_is_pinned() {
    let (dir, cfg) = setup(swiss_config(&["TD"]));
    assert_eq!(code(&run("envelope", &cfg, &["--kinds", "TD"])), 0);
    let text = fs::read_to_string(dir.path().join("out").join("td.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "# kind=TD,dt_s=900,defined_up_to=96,label=swiss_house_system");
    assert_eq!(lines.next().unwrap(), golden("envelope_columns.txt").trim_end());
    assert_eq!(lines.next().unwrap(), "0,0,0.000000,0.000000");
}

#[test]
fn nine_room_distributed_writes_one_csv_per_load() {
    let config = serde_json::json!({
        "model": { "builtin": "nine_room" },
        "ambient": { "source": "synthetic", "mean_C": 5.0, "amplitude_C": 10.0, "period_s": 86400.0 },
        "dt_s": 900.0,
        "horizon_s": 21600.0,
        "kinds": ["TI_distributed"],
    });
    let (dir, cfg) = setup(config);
    let out = run("envelope", &cfg, &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let files: Vec<_> = fs::read_dir(dir.path().join("out"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("ti_distributed_") && n.ends_with(".csv"))
        .collect();
    assert_eq!(files.len(), 9, "{files:?}");
}

#[test]
fn horizon_must_be_a_multiple_of_dt() {
    let mut config = swiss_config(&["TD"]);
    config["horizon_s"] = Value::from(86000.0);
    let (_dir, cfg) = setup(config);
    assert_eq!(code(&run("envelope", &cfg, &[])), 2);
}

#[test]
fn ti_scalar_needs_one_state() {
    let config = serde_json::json!({
        "model": { "builtin": "nine_room" },
        "dt_s": 900.0,
        "horizon_s": 3600.0,
        "kinds": ["TI_scalar"],
    });
    let (_dir, cfg) = setup(config);
    assert_eq!(code(&run("envelope", &cfg, &[])), 2);
}

#[test]
fn infeasibility_is_a_result() {
    let mut config = swiss_config(&["TD", "TI_scalar"]);
    config["ambient"] = serde_json::json!({ "source": "constant", "value_C": -20.0 });
    let (dir, cfg) = setup(config);
    let out = run("envelope", &cfg, &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out").join("summary.json")).unwrap()).unwrap();
    for env in summary["envelopes"].as_array().unwrap() {
        let from = env["infeasible_from"].as_u64().expect("infeasible lead time reported");
        assert!(from > 1 && from < 96);
        assert_eq!(env["defined_up_to"].as_u64().unwrap(), from - 1);
    }
    assert_eq!(data_rows(&dir.path().join("out").join("td.csv")), 97);
}

#[test]
fn verify_finds_td_violation_and_clears_ti() {
    let (dir, cfg) = setup(swiss_config(&["TD", "TI_scalar"]));
    let out = run("verify", &cfg, &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let verdict: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out").join("verdict.json")).unwrap()).unwrap();
    let kinds = verdict["kinds"].as_array().unwrap();
    let td = kinds.iter().find(|k| k["kind"] == "TD").unwrap();
    let ti = kinds.iter().find(|k| k["kind"] == "TI_scalar").unwrap();
    assert!(td["violation_count"].as_u64().unwrap() >= 1);
    let b = td["scenarios"].as_array().unwrap().iter().find(|s| s["name"] == "B").unwrap();
    assert_eq!(b["feasible"], false);
    assert!(b["worst_below_C"].as_f64().unwrap() > 0.05);
    assert_eq!(ti["violation_count"], 0);
    assert_eq!(verdict["ti_sound"], true);
}

#[test]
fn verify_is_byte_identical_for_a_fixed_seed() {
    let (dir, cfg) = setup(swiss_config(&["TD", "TI_scalar"]));
    let read = || fs::read(dir.path().join("out").join("verdict.json")).unwrap();
    assert_eq!(code(&run("verify", &cfg, &["--seed", "42", "--workers", "1"])), 0);
    let first = read();
    assert_eq!(code(&run("verify", &cfg, &["--seed", "42", "--workers", "4"])), 0);
    assert_eq!(first, read());
    assert_eq!(code(&run("verify", &cfg, &["--seed", "43"])), 0);
    assert_ne!(first, read());
}

#[test]
fn verify_flags_an_unsound_ti_envelope() {
    // a TD envelope relabelled as TI must be caught
    let (dir, cfg) = setup(swiss_config(&["TD"]));
    assert_eq!(code(&run("envelope", &cfg, &[])), 0);
    let out_dir = dir.path().join("out");
    let td = fs::read_to_string(out_dir.join("td.csv")).unwrap();
    let stored = dir.path().join("stored");
    fs::create_dir_all(&stored).unwrap();
    fs::write(stored.join("ti_scalar.csv"), td.replacen("kind=TD", "kind=TI_scalar", 1)).unwrap();
    let mut config = swiss_config(&["TI_scalar"]);
    config["envelope_dir"] = Value::from("stored");
    let (_d2, cfg2) = setup(config);
    fs::rename(&stored, cfg2.parent().unwrap().join("stored")).unwrap();
    let out = run("verify", &cfg2, &[]);
    assert_eq!(code(&out), 5, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn envelope_output_does_not_depend_on_workers() {
    let (dir, cfg) = setup(swiss_config(&["TD", "TI_scalar"]));
    let out_dir = dir.path().join("out");
    assert_eq!(code(&run("envelope", &cfg, &["--workers", "1"])), 0);
    let one = (fs::read(out_dir.join("td.csv")).unwrap(), fs::read(out_dir.join("summary.json")).unwrap());
    assert_eq!(code(&run("envelope", &cfg, &["--workers", "3"])), 0);
    let three = (fs::read(out_dir.join("td.csv")).unwrap(), fs::read(out_dir.join("summary.json")).unwrap());
    assert_eq!(one, three);
}

#[test]
fn centralized_with_file_ambient_and_plan() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.json");
    fs::write(&plan, serde_json::json!({ "delta": vec![vec![1.0 / 9.0; 9]; 4] }).to_string()).unwrap();
    let config = serde_json::json!({
        "model": { "builtin": "nine_room_insulated" },
        "ambient": { "source": "file", "path": fixture("ambient_day.csv") },
        "dt_s": 900.0,
        "horizon_s": 7200.0,
        "kinds": ["TI_centralized"],
        "dispatch": "plan.json",
        "seeds": { "start": 0, "count": 20 },
    });
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, config.to_string()).unwrap();
    let out = run("verify", &cfg, &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(code(&run("envelope", &cfg, &[])), 0);
    let out_dir = dir.path().join("out");
    assert_eq!(data_rows(&out_dir.join("ti_centralized.csv")), 9);
    assert!(out_dir.join("dispatch_plan.json").exists());
}

#[test]
fn euler_scheme_is_selectable() {
    let (dir, cfg) = setup(swiss_config(&["TD"]));
    assert_eq!(code(&run("envelope", &cfg, &["--scheme", "forward_euler", "--out", dir.path().join("euler").to_str().unwrap()])), 0);
    assert_eq!(code(&run("envelope", &cfg, &["--out", dir.path().join("zoh").to_str().unwrap()])), 0);
    let euler = EnvelopeSeries::from_csv_file(&dir.path().join("euler").join("td.csv")).unwrap();
    let zoh = EnvelopeSeries::from_csv_file(&dir.path().join("zoh").join("td.csv")).unwrap();
    let gap = (0..=96).map(|k| (euler.e_up[k] - zoh.e_up[k]).abs()).fold(0.0, f64::max);
    assert!(gap > 0.0 && gap < 0.01 * zoh.e_up[96]);
}

#[test]
fn sweep_writes_48_rows_and_orderings() {
    let config = serde_json::json!({ "dt_s": 900.0 });
    let (dir, cfg) = setup(config);
    let out = run("sweep", &cfg, &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("out").join("metrics.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), golden("metrics_columns.txt").trim_end());
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 48);
    let reduction = |name: &str| -> f64 {
        rows.iter().find(|r| r[0] == name && r[1] == "86400").unwrap()[4].parse().unwrap()
    };
    assert!(reduction("Light-Poor") > reduction("Heavy-VeryWell"));
    for r in rows.iter().filter(|r| r[1] == "3600") {
        assert!(r[4].parse::<f64>().unwrap() <= 0.1, "{r:?}");
    }
    let verdicts: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out").join("orderings.json")).unwrap()).unwrap();
    let day = verdicts.as_array().unwrap().iter().find(|v| v["horizon_s"] == 86400.0).unwrap();
    assert_eq!(day["reduction_vs_insulation"], true);
    assert_eq!(day["reduction_vs_construction"], true);
    assert_eq!(day["mfph_vs_insulation"], true);
}
