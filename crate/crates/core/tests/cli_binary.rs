//! The `hris-sim` binary: flags, config precedence, output files and exit codes.

use std::fs;
use std::process::{Command, Output};

use hris::cli::{parse_table, sidecar_path, OutputFormat};

fn sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hris-sim"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn hris-sim")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn flag_overrides_file_in_effective_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "seed = 3\n[dims]\ntau = 100\n").unwrap();
    let o = sim(&["validate", "--config", cfg.to_str().unwrap(), "--tau", "70", "--print-effective-config"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("tau = 70"), "{text}");
    assert!(text.contains("seed = 3"), "{text}");
}

#[test]
fn empty_config_prints_reference_dimensions() {
    let o = sim(&["snr-sweep", "--print-effective-config"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    for line in ["m = 16", "n = 64", "n_r = 8", "k = 8", "tau = 100"] {
        assert!(text.lines().any(|l| l == line), "missing `{line}` in\n{text}");
    }
}

#[test]
fn config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[dims]\nn = 4\nn_r = 8\n").unwrap();
    let o = sim(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("dims.n_r"), "{}", stderr(&o));

    fs::write(&cfg, "trails = 10\n").unwrap();
    let o = sim(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("trails"));

    assert_eq!(sim(&["validate", "--parallelism", "lots"]).status.code(), Some(1));
    assert_eq!(sim(&["validate", "--bogus"]).status.code(), Some(1));
    assert_eq!(sim(&["--help"]).status.code(), Some(0));
}

#[test]
fn io_errors_exit_2() {
    let o = sim(&["validate", "--config", "/nonexistent/run.toml"]);
    assert_eq!(o.status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let out = blocker.join("table.csv");
    let o = sim(&["tradeoff", "--trials", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn writes_csv_json_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let common = ["tradeoff", "--seed", "4", "--parallelism", "strict"];
    let csv = dir.path().join("t.csv");
    let json = dir.path().join("t.json");
    let o = sim(&[&common[..], &["--out", csv.to_str().unwrap()]].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    let o = sim(&[&common[..], &["--format", "json", "--out", json.to_str().unwrap()]].concat());
    assert!(o.status.success(), "{}", stderr(&o));

    let a = parse_table(&fs::read_to_string(&csv).unwrap(), OutputFormat::Csv).unwrap();
    let b = parse_table(&fs::read_to_string(&json).unwrap(), OutputFormat::Json).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 5 * 9 * 2);

    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(sidecar_path(&csv)).unwrap()).unwrap();
    assert_eq!(meta["artifact"], "hris");
    assert_eq!(meta["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(meta["config"]["seed"], 4);
    assert!(meta["timestamp_unix"].as_u64().is_some());
}

#[test]
fn stdout_when_no_out() {
    let o = sim(&["prop1", "--trials", "1", "--config", "/dev/null"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("study,sweep_var,sweep_value,metric,mean,stderr,trials,seed\n"));
    assert!(text.contains("prop1,tau,64.0,identifiable_rate,1.0,"));
}
