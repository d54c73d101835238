use std::fs;
use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_radialscope"))
}

const MODEL_CONFIG: &str = r#"
[operator]
dim = 1
m = 1.0
terms = [
  { order = 1.0, expr = "x1*xi1" },
  { order = 0.0, expr = "-0.25*i" },
]

[numerics]
seed = 7

[commutant]
s_below = 0.0
s_above = 1.0
s1 = 0.5

[probe]
grid_log2 = 15
c_values = ["0", "0.25i"]
"#;

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn full_run_passes_and_writes_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), MODEL_CONFIG);
    let out = tmp.path().join("out");
    let status = bin()
        .args(["full", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    for name in [
        "analyze.json",
        "flow.json",
        "commutant.json",
        "probe.json",
        "probe_table.txt",
        "shells_heaviside.txt",
        "verdict.json",
        "run_meta.json",
    ] {
        assert!(out.join(name).exists(), "missing {name}");
    }
    let verdict: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("verdict.json")).unwrap()).unwrap();
    assert_eq!(verdict["overall_pass"], true);
    for row in verdict["probe_rows"].as_array().unwrap() {
        assert!(row["abs_diff"].as_f64().unwrap() <= 0.1);
    }
    // Every report cites the config hash.
    let analyze: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("analyze.json")).unwrap()).unwrap();
    assert_eq!(analyze["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(analyze["threshold"]["s0"].as_f64().unwrap(), 0.25);
}

#[test]
fn identical_config_and_seed_reproduce_reports_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), MODEL_CONFIG);
    let mut outputs = Vec::new();
    for k in 0..2 {
        let out = tmp.path().join(format!("out{k}"));
        let status = bin()
            .args(["analyze", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0));
        outputs.push(out);
    }
    for entry in fs::read_dir(&outputs[0]).unwrap() {
        let name = entry.unwrap().file_name();
        if name == "run_meta.json" {
            continue; // timestamps are segregated here by design
        }
        let a = fs::read(outputs[0].join(&name)).unwrap();
        let b = fs::read(outputs[1].join(&name)).unwrap();
        assert_eq!(a, b, "report {name:?} differs between identical runs");
    }
}

#[test]
fn malformed_config_exits_with_validation_code() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "[operator]\ndim = 1\n");
    let output = bin()
        .args(["analyze", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(tmp.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&output.stderr).is_empty());
}

#[test]
fn unknown_variable_in_term_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        r#"
[operator]
dim = 1
m = 1.0
terms = [{ order = 1.0, expr = "x1*bogus" }]
[numerics]
seed = 3
"#,
    );
    let output = bin()
        .args(["analyze", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(tmp.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("bogus"));
}

#[test]
fn threshold_crossing_yields_verification_failure() {
    // Feeding s above the threshold to the below-threshold construction must
    // exit 2 with a sign-violation report (the report is still written).
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        r#"
[operator]
dim = 2
m = 1.0
terms = [{ order = 1.0, expr = "x2*xi2" }]
[numerics]
seed = 11
[commutant]
s_below = 0.6
s_above = 1.0
s1 = 0.5
"#,
    );
    let out = tmp.path().join("out");
    let status = bin()
        .args(["commutant", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("commutant.json")).unwrap()).unwrap();
    let below = &report["cases"][0];
    assert_eq!(below["built"], false);
    assert!(below["sign_violation"]["point"].as_str().is_some());
}

#[test]
fn seed_override_changes_the_recorded_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), MODEL_CONFIG);
    let out = tmp.path().join("out");
    let status = bin()
        .args(["analyze", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .args(["--seed", "99"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let analyze: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("analyze.json")).unwrap()).unwrap();
    assert_eq!(analyze["seed"], 99);
}
