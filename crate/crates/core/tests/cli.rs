use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mbqc-loops"))
}

fn run(args: &[&str]) -> (i32, String, String) {
    let out = bin().args(args).output().unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn data_rows(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(String::from)
        .collect()
}

const SMALL_SCAN: &[&str] = &[
    "--lattice", "square", "--boundary", "torus", "--sizes", "4,6", "--g", "0.55,0.6,0.65,0.7",
    "--samples", "60", "--burn-in", "20", "--thinning", "2", "--seed", "11",
];

#[test]
fn scan_is_reproducible_and_independent_of_workers() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (name, workers) in [("a", "1"), ("b", "1"), ("c", "3")] {
        let out = dir.path().join(name);
        let mut args = vec!["scan", "--out", out.to_str().unwrap(), "--workers", workers];
        args.extend_from_slice(SMALL_SCAN);
        let (code, _, err) = run(&args);
        assert_eq!(code, 0, "{err}");
        assert!(!out.join("scan.partial.csv").exists());
        outputs.push(out);
    }
    let a = data_rows(&outputs[0].join("scan.csv"));
    assert_eq!(a.len(), 1 + 8);
    assert_eq!(a, data_rows(&outputs[1].join("scan.csv")));
    assert_eq!(a, data_rows(&outputs[2].join("scan.csv")));
    assert_eq!(
        std::fs::read(outputs[0].join("scan.json")).unwrap().len(),
        std::fs::read(outputs[1].join("scan.json")).unwrap().len()
    );
}

#[test]
fn outputs_carry_the_run_header() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("h");
    let mut args = vec!["scan", "--out", out.to_str().unwrap()];
    args.extend_from_slice(SMALL_SCAN);
    assert_eq!(run(&args).0, 0);
    let csv = std::fs::read_to_string(out.join("scan.csv")).unwrap();
    assert!(csv.lines().any(|l| l == "# master_seed = 11"));
    assert!(csv.contains("# [lattice]"));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("scan.json")).unwrap()).unwrap();
    assert_eq!(json["header"]["master_seed"], 11);
    assert_eq!(json["header"]["config"]["lattice"]["kind"], "square");
    assert_eq!(json["estimates"].as_array().unwrap().len(), 8);
    assert_eq!(json["estimates"][0]["L"], 4);
    let svg = std::fs::read_to_string(out.join("scan.svg")).unwrap();
    assert!(svg.starts_with("<!--") && svg.contains("master_seed = 11"));
}

#[test]
fn config_file_is_read_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        r#"
[lattice]
kind = "honeycomb"
size = 3
boundary = "torus"

[model]
grid = [0.5]

[sampler]
burn_in_sweeps = 5
thinning_sweeps = 1
n_samples = 5
seed = 5

[output]
formats = ["json"]
"#,
    )
    .unwrap();
    let out = dir.path().join("o");
    let (code, _, err) = run(&["snapshot", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "6"]);
    assert_eq!(code, 0, "{err}");
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("snapshot.json")).unwrap()).unwrap();
    assert_eq!(json["header"]["master_seed"], 6);
    assert_eq!(json["outcomes"].as_str().unwrap().len(), 18);
    assert!(!out.join("snapshot.svg").exists());
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().to_str().unwrap();
    assert_eq!(run(&["threshold", "--sizes", "8", "--out", o]).0, 1);
    assert_eq!(run(&["scan", "--g", "0.5,1.2", "--regime", "sub", "--out", o]).0, 1);
    assert_eq!(run(&["classify", "--lattice", "custom", "--generator-seed", "1", "--g", "0.5", "--out", o]).0, 1);
    let cfg = dir.path().join("empty.toml");
    std::fs::write(&cfg, "[model]\ngrid = []\n").unwrap();
    assert_eq!(run(&["scan", "--config", cfg.to_str().unwrap(), "--out", o]).0, 1);
    std::fs::write(&cfg, "[lattice]\nsides = 6\n").unwrap();
    assert_eq!(run(&["scan", "--config", cfg.to_str().unwrap(), "--out", o]).0, 1);
    assert_eq!(run(&["no-such-command"]).0, 1);
}

#[test]
fn failing_checks_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().to_str().unwrap();
    let base = ["oracle", "--lattice", "square", "--size", "2", "--boundary", "torus", "--g", "0.5,1.3", "--out", o];
    let (code, stdout, _) = run(&base);
    assert_eq!(code, 0);
    assert!(stdout.contains("PASS") && !stdout.contains("FAIL"));
    let mut printed = base.to_vec();
    printed.push("--printed-exponent");
    let (code, stdout, _) = run(&printed);
    assert_eq!(code, 2);
    assert!(stdout.contains("FAIL"));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("oracle.json")).unwrap()).unwrap();
    assert_eq!(json["exponent"], "asprinted");
}

#[test]
fn missing_crossing_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = run(&[
        "threshold", "--lattice", "square", "--boundary", "torus", "--sizes", "4,6", "--g", "0.1,0.15,0.2,0.25",
        "--samples", "50", "--burn-in", "20", "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 3, "{err}");
    assert!(err.contains("do not cross"));
    // The scan itself is still written for diagnosis.
    assert!(dir.path().join("threshold.csv").exists());
}

#[test]
fn census_and_classify_write_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().to_str().unwrap();
    let (code, _, err) = run(&[
        "census", "--lattice", "honeycomb", "--boundary", "torus", "--sizes", "4", "--g", "0.3,0.95",
        "--samples", "40", "--burn-in", "20", "--out", o,
    ]);
    assert_eq!(code, 0, "{err}");
    let rows = data_rows(&dir.path().join("census.csv"));
    assert_eq!(rows.len(), 3);
    assert!(rows[2].ends_with("true"), "{}", rows[2]);
    let (code, stdout, _) = run(&["classify", "--lattice", "honeycomb", "--g", "-0.9,0,0.759,0.9", "--out", o]);
    assert_eq!(code, 0);
    let labels: Vec<&str> = stdout.lines().filter(|l| l.starts_with("g=")).map(|l| l.split(' ').nth(1).unwrap()).collect();
    assert_eq!(labels, ["SPT1", "SB", "Boundary", "SPT0"]);
}
