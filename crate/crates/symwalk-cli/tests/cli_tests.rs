//! End-to-end tests driving the installed binary through its public
//! contract: exit codes, output headers, and determinism guarantees.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_symwalk"))
}

fn preset(name: &str) -> String {
    format!("{}/../../configs/{}", env!("CARGO_MANIFEST_DIR"), name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary should spawn")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("stdout should be UTF-8")
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("stderr should be UTF-8")
}

#[test]
fn missing_config_is_a_configuration_error() {
    let out = run(&["kernel"]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("configuration error"));
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(
        &path,
        r#"{"seed": 1, "model": {"kind": "telegraph"}, "beta": 1.0, "surprise": true}"#,
    )
    .unwrap();
    let out = run(&["kernel", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).contains("unknown field"),
        "stderr should name the stray key: {}",
        stderr(&out)
    );
}

#[test]
fn dv_rate_prints_zero_for_the_uniform_internal_preset() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "dv-rate",
        "--config",
        &preset("lattice.json"),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let first = stdout(&out);
    let first = first.lines().next().unwrap_or("");
    assert_eq!(
        first, "0.0",
        "uniform target on an internal box has zero rate"
    );
}

#[test]
fn dv_rate_requires_a_lattice_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "dv-rate",
        "--config",
        &preset("telegraph.json"),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
}

#[test]
fn seed_override_is_recorded_in_the_header() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "kernel",
        "--config",
        &preset("lattice.json"),
        "--seed",
        "99",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let text = fs::read_to_string(dir.path().join("kernel.csv")).unwrap();
    assert!(text.lines().any(|l| l == "# seed = 99"), "header: {text}");
}

#[test]
fn sample_output_is_bitwise_identical_across_thread_counts() {
    let render = |threads: &str| -> Vec<u8> {
        let dir = tempfile::tempdir().unwrap();
        let out = run(&[
            "sample",
            "--config",
            &preset("telegraph.json"),
            "--threads",
            threads,
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
        fs::read(dir.path().join("sample.csv")).unwrap()
    };
    assert_eq!(
        render("1"),
        render("8"),
        "thread count must not change the bytes"
    );
}

#[test]
fn basis_overflow_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("huge.json");
    fs::write(
        &path,
        r#"{
  "seed": 5,
  "model": {"kind": "lattice", "lo": [0, 0], "hi": [2, 2]},
  "beta": 1.0,
  "n_particles": 200,
  "functional": {"kind": "quadratic", "a": 1.0, "b": 0.0, "c": 0.0}
}"#,
    )
    .unwrap();
    let out = run(&[
        "free-energy",
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("numerical failure"));
}

#[test]
fn verify_passes_on_both_presets() {
    for name in ["telegraph.json", "lattice.json"] {
        let out = run(&["verify", "--config", &preset(name)]);
        assert_eq!(
            out.status.code(),
            Some(0),
            "{name} stderr: {}",
            stderr(&out)
        );
        assert!(
            stdout(&out).contains("all checks passed"),
            "{name}: {}",
            stdout(&out)
        );
    }
}

#[test]
fn free_energy_preset_matches_the_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "free-energy",
        "--config",
        &preset("telegraph.json"),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let text = fs::read_to_string(dir.path().join("free-energy.csv")).unwrap();
    let mut finite = Vec::new();
    let mut variational = None;
    for line in text.lines().skip(4) {
        let cols: Vec<&str> = line.split(',').collect();
        match cols[0] {
            "finite_n" => finite.push((
                cols[1].parse::<usize>().unwrap(),
                cols[2].parse::<f64>().unwrap(),
            )),
            "variational" => variational = Some(cols[2].parse::<f64>().unwrap()),
            other => panic!("unexpected quantity {other}"),
        }
    }
    let variational = variational.expect("variational row present");
    // The preset has f(u) = 0.75 u at beta = 1, whose limit free energy is
    // (sqrt(1 + 4 c^2) - 1) / 2.
    let closed = 0.5 * (1.0f64 + 4.0 * 0.75 * 0.75).sqrt() - 0.5;
    assert!((variational - closed).abs() <= 1e-6 * closed);
    assert_eq!(
        finite.iter().map(|&(n, _)| n).collect::<Vec<_>>(),
        vec![50, 100, 200, 500]
    );
    let last = finite.last().unwrap().1;
    assert!(
        (last - closed).abs() <= 0.01 * closed,
        "N = 500 sits within 1%"
    );
    for pair in finite.windows(2) {
        assert!(
            pair[1].1 < pair[0].1,
            "finite sizes decrease towards the limit"
        );
    }
}

#[test]
fn outputs_share_the_config_hash_across_commands() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["kernel", "sample"] {
        let out = run(&[
            cmd,
            "--config",
            &preset("telegraph.json"),
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    }
    let hash_line = |p: &Path| -> String {
        fs::read_to_string(p)
            .unwrap()
            .lines()
            .find(|l| l.starts_with("# config_hash"))
            .expect("hash header present")
            .to_string()
    };
    assert_eq!(
        hash_line(&dir.path().join("kernel.csv")),
        hash_line(&dir.path().join("sample.csv"))
    );
}
