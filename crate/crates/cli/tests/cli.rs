//! End-to-end checks of the runner binary: exit codes, output determinism,
//! and the manifest contract.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cauchy-bpre"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path
}

const SPITZER_CONFIG: &str = r#"
[run]
experiment = "spitzer"
model = "lattice"
seed = 7

[lattice]
support = [1, -1]
probs = [0.5, 0.5]

[spitzer]
n_max = 512
"#;

#[test]
fn spitzer_run_produces_convolution_csv_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SPITZER_CONFIG);
    let out = dir.path().join("out");
    let status = bin()
        .args(["--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());

    let csv = std::fs::read_to_string(out.join("spitzer.csv")).unwrap();
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    let residual_col = header
        .split(',')
        .position(|c| c == "convolution_residual")
        .expect("residual column present");
    let mut max_residual = 0.0f64;
    for line in lines {
        let cell: f64 = line.split(',').nth(residual_col).unwrap().parse().unwrap();
        max_residual = max_residual.max(cell.abs());
    }
    assert!(max_residual <= 1e-10, "max residual {max_residual}");

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["experiment"], "spitzer");
    assert!(manifest["verdicts"][0]["pass"].as_bool().unwrap());
    for file in manifest["outputs"].as_array().unwrap() {
        let meta = std::fs::metadata(file.as_str().unwrap()).unwrap();
        assert!(meta.len() > 0);
    }
}

#[test]
fn equal_seed_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"
[law]
kind = "log-power"
p = 0.7
c = 1.0
m = 2.0

[family]
kind = "linear-fractional"
eta0 = 2.0
a = 3
beta = 1.0
log_mean_shift = 0.0

[run]
experiment = "survival"
ns = [16, 64]
trials = 2000
seed = 11
"#,
    );
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let status = bin()
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .arg("--workers")
            .arg(if name == "a" { "1" } else { "2" })
            .status()
            .unwrap();
        assert!(status.success());
        outputs.push(std::fs::read(out.join("survival.csv")).unwrap());
    }
    assert_eq!(
        outputs[0], outputs[1],
        "estimates must be byte-identical across worker counts"
    );
}

#[test]
fn symmetric_law_is_rejected_for_theorem_experiments() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"
[law]
kind = "log-power"
p = 0.5
c = 1.0
m = 2.0

[run]
experiment = "theorem-ratio"
ns = [64]
trials = 100
"#,
    );
    let output = bin()
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("p must differ from q"),
        "stderr was: {stderr}"
    );
}

#[test]
fn malformed_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "this is not toml = [");
    let output = bin()
        .arg("--config")
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn unknown_experiment_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"
[run]
experiment = "not-an-experiment"
"#,
    );
    let output = bin().arg("--config").arg(&config).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn condition_c_reports_consistency() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"
[law]
kind = "log-power"
p = 0.7
c = 1.0
m = 2.0

[run]
experiment = "condition-c"
seed = 3

[condition_c]
theta = 0.1
j_max = 120
"#,
    );
    let out = dir.path().join("out");
    let status = bin()
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("condition_c.json")).unwrap())
            .unwrap();
    // pm/(p-q) = 3.5 at theta = 0.1: decisively convergent
    assert!(summary["consistent_with_convergence"].as_bool().unwrap());
    assert!(summary["fitted_exponent"].as_f64().unwrap() > 1.0);
}

#[test]
fn env_var_overrides_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SPITZER_CONFIG);
    let out = dir.path().join("from_env");
    let status = bin()
        .arg("--config")
        .arg(&config)
        .env("CAUCHY_BPRE_OUT", &out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("spitzer.csv").exists());
}
