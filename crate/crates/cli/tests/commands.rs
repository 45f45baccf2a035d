use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn ou_levy(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ou-levy"))
        .args(args)
        .env_remove("OU_LEVY_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// Small constant-density model; `extra` is appended verbatim.
fn write_config(dir: &Path, times: &str, x: &str, y: &str, extra: &str) -> PathBuf {
    let text = format!(
        r#"
[model]
family = "gaussian52"
n_modes = 4
delta = 1.0
d = 2.0

[levy.rho0]
family = "constant"
c = 1.0

[run]
seed = 7
replicas = 2000
times = {times}
x = "{x}"
y = "{y}"
{extra}
"#
    );
    let path = dir.join("exp.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn tv_decay_header_rows_and_line_endings() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "[1.0, 2.0, 4.0]", "e1", "-e1", "");
    let text = stdout(&ou_levy(&["tv-decay", "--config", cfg.to_str().unwrap()]));
    assert!(!text.contains('\r'));
    assert!(text.ends_with('\n'));
    assert_eq!(
        text.lines().next().unwrap(),
        "t,tv_projection,tv_stderr,tv_coupling_upper,bound_coupling1,bound_z3,seed"
    );
    let rows = rows(&text);
    assert_eq!(rows.len(), 3);
    for (row, t) in rows.iter().zip([1.0, 2.0, 4.0]) {
        assert_eq!(row.len(), 7);
        assert_eq!(row[0].parse::<f64>().unwrap(), t);
        assert_eq!(row[6], "7");
        let tv: f64 = row[1].parse().unwrap();
        assert!((0.0..=2.0).contains(&tv));
    }
}

#[test]
fn tv_decay_is_zero_when_starts_agree() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "[1.0, 2.0]", "e2", "e2", "");
    let text = stdout(&ou_levy(&["tv-decay", "--config", cfg.to_str().unwrap()]));
    for row in rows(&text) {
        for col in &row[1..4] {
            assert_eq!(col.parse::<f64>().unwrap(), 0.0, "row {row:?}");
        }
    }
}

#[test]
fn tv_decay_writes_files_and_repeats_bytes() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "[1.0, 2.0]", "e1", "origin", "");
    let cfg = cfg.to_str().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    stdout(&ou_levy(&["tv-decay", "--config", cfg, "--out", a.to_str().unwrap()]));
    stdout(&ou_levy(&[
        "tv-decay",
        "--config",
        cfg,
        "--out",
        b.to_str().unwrap(),
        "--threads",
        "2",
    ]));
    let read = |d: &Path| std::fs::read(d.join("tv_decay.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    let other = stdout(&ou_levy(&["tv-decay", "--config", cfg, "--seed", "8"]));
    assert_ne!(other.as_bytes(), read(&a).as_slice());
}

#[test]
fn z3_bound_halves_at_log_four() {
    let dir = TempDir::new().unwrap();
    let extra = "[bounds]\nkinds = [\"exponential_z3\"]\ntimes = [0.0, 1.3862943611198906]\nc = 3.0\nlambda0 = 1.0\nlambda = 1.0\n";
    let cfg = write_config(dir.path(), "[1.0]", "e1", "e1", extra);
    let text = stdout(&ou_levy(&["bounds", "--config", cfg.to_str().unwrap()]));
    assert_eq!(text.lines().next().unwrap(), "t,kind,value,params_json");
    let values: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| {
            let fields: Vec<&str> = l.splitn(4, ',').collect();
            assert_eq!(fields[1], "exponential_z3");
            fields[2].parse().unwrap()
        })
        .collect();
    assert_eq!(values.len(), 2);
    assert!((values[0] - 3.0).abs() < 1e-12);
    assert!((values[1] - 1.5).abs() < 1e-12);
}

#[test]
fn polynomial_bound_halves_over_sixteen_fold_time() {
    let dir = TempDir::new().unwrap();
    let extra = "[bounds]\nkinds = [\"polynomial_52\"]\ntimes = [2.0, 32.0]\n";
    let cfg = write_config(dir.path(), "[1.0]", "e1", "-e1", extra);
    let text = stdout(&ou_levy(&["bounds", "--config", cfg.to_str().unwrap()]));
    let values: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert!((values[0] / values[1] - 2.0).abs() < 1e-12);
}

#[test]
fn bounds_params_are_json() {
    let text = stdout(&ou_levy(&["bounds", "--preset", "gaussian52-small"]));
    let mut kinds = std::collections::BTreeSet::new();
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.splitn(4, ',').collect();
        kinds.insert(fields[1].to_string());
        let params = fields[3].trim_matches('"').replace("\"\"", "\"");
        let _: serde_json::Value = serde_json::from_str(&params).unwrap();
    }
    assert_eq!(kinds.len(), 3);
}

#[test]
fn usage_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "[]", "e1", "-e1", "");
    let cases: Vec<Vec<&str>> = vec![
        vec!["tv-decay", "--config", cfg.to_str().unwrap()],
        vec!["verify", "mineka", "--seed", "1", "--replicas", "100"],
        vec!["verify", "nonsense", "--seed", "1"],
        vec!["verify", "cm"],
        vec!["tv-decay", "--preset", "no-such-preset"],
        vec!["tv-decay", "--preset", "gaussian52-small", "--replicas", "10"],
    ];
    for args in cases {
        let out = ou_levy(&args);
        assert_eq!(
            out.status.code(),
            Some(2),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

#[test]
fn missing_config_file_is_an_io_error() {
    let out = ou_levy(&["tv-decay", "--config", "/nonexistent/exp.toml"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn verify_report_is_json() {
    let dir = TempDir::new().unwrap();
    let out = ou_levy(&[
        "verify",
        "decomposition",
        "--seed",
        "3",
        "--replicas",
        "1000",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.code() == Some(0) || out.status.code() == Some(1));
    let text = std::fs::read_to_string(dir.path().join("verify_decomposition.json")).unwrap();
    let report: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(report["seed"], 3);
    let suites = report["suites"].as_array().unwrap();
    assert_eq!(suites.len(), 1);
    assert_eq!(suites[0]["suite"], "decomposition");
    assert_eq!(report["pass"].as_bool(), Some(out.status.success()));
}

#[test]
fn couple_trace_lines_follow_the_schema() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "[0.5, 2.0]", "e1", "-e1", "");
    let text = stdout(&ou_levy(&[
        "couple-trace",
        "--config",
        cfg.to_str().unwrap(),
        "--count",
        "25",
    ]));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 25);
    for line in lines {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let obj = v.as_object().unwrap();
        let keys: Vec<&str> = obj.keys().map(String::as_str).collect();
        assert_eq!(keys.len(), 5, "{keys:?}");
        let times = v["times"].as_array().unwrap();
        let a = v["a"].as_array().unwrap();
        let du = v["dU"].as_array().unwrap();
        assert_eq!(times.len(), a.len());
        assert_eq!(times.len(), du.len());
        assert!(times.iter().all(|t| t.as_f64().unwrap() <= 2.0));
        assert!(a.iter().all(|s| s.as_array().unwrap().len() == 4));
        assert!(du.iter().all(|d| [-1, 0, 1].contains(&d.as_i64().unwrap())));
        assert!(v["t_couple"].is_null() || v["t_couple"].is_u64());
        assert!(v["coupled"].is_boolean());
    }
}
