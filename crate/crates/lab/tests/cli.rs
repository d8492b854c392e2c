//! End-to-end behavior of the `scatterlab` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use scatterlab::dump::read_matrix;
use scatterlab::RunReport;
use scatterlab_core::CMatrix;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_scatterlab"))
}

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn run_in(cfg: &Path, out: &Path) -> Output {
    run(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const SMALL: &str = r#"{
  "name": "small",
  "seed": 1,
  "truncation": { "mass": 1.0, "box_length": 6.283185307179586, "mode_cutoff": 1, "n_max": 3, "x_points": 16 },
  "polynomial": [0.0, 0.0, 0.0, 0.0, 1.0],
  "coupling": [
    { "amplitude": 0.05, "t_center": 0.0, "t_radius": 0.5, "space": { "kind": "bump", "center": 3.0, "radius": 1.5 } }
  ],
  "grid": { "t_start": -0.75, "t_end": 0.75, "dt": 0.01 },
  "checks": [ CHECKS ]
}"#;

fn small(checks: &str) -> String {
    SMALL.replace("CHECKS", checks)
}

#[test]
fn malformed_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let bad_type = write(
        dir.path(),
        "a.json",
        &small(r#"{ "kind": "unitarity" }"#).replace(r#""n_max": 3"#, r#""n_max": "three""#),
    );
    let o = run_in(&bad_type, dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("truncation.n_max"), "{}", stderr(&o));

    let unknown = write(dir.path(), "b.json", &small(r#"{ "kind": "unitarity", "widden": 1.0 }"#));
    let o = run_in(&unknown, dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("checks[0]"), "{}", stderr(&o));

    let not_json = write(dir.path(), "c.json", "{ name: ");
    assert_eq!(run_in(&not_json, dir.path()).status.code(), Some(2));
    assert_eq!(run_in(&dir.path().join("missing.json"), dir.path()).status.code(), Some(2));
}

#[test]
fn dimension_cap_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .env("SCATTERLAB_DIM_CAP", "5")
        .args(["run", config("free_minimal.json").to_str().unwrap(), "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).to_lowercase().contains("dimension"), "{}", stderr(&o));
}

#[test]
fn free_theory_scatters_trivially() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(&config("free_minimal.json"), dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = RunReport::from_json(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert!(report.pass);
    assert!(report.checks.iter().all(|c| c.pass));
    let (s, _) = read_matrix(std::fs::File::open(dir.path().join("00_s_operator.bin")).unwrap()).unwrap();
    assert_eq!(s, CMatrix::identity(s.nrows(), s.ncols()));
    assert!(std::fs::read_to_string(dir.path().join("run.log")).unwrap().contains("config=free_minimal"));
}

#[test]
fn failing_check_exits_one_and_check_revalidates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "strict.json",
        &small(r#"{ "kind": "covariance", "spatial_tolerance": 0.0 }, { "kind": "kato" }"#),
    );
    let o = run_in(&cfg, dir.path());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("FAIL covariance_spatial"));
    assert!(stdout.contains("PASS kato_contractive"));

    let report = dir.path().join("report.json");
    assert_eq!(run(&["check", report.to_str().unwrap()]).status.code(), Some(1));

    // a consistent passing report re-validates
    let ok = write(dir.path(), "ok.json", &small(r#"{ "kind": "kato" }"#));
    let out2 = dir.path().join("ok");
    assert_eq!(run_in(&ok, &out2).status.code(), Some(0));
    let report = out2.join("report.json");
    assert_eq!(run(&["check", report.to_str().unwrap()]).status.code(), Some(0));

    // a flipped pass flag is caught
    let text = std::fs::read_to_string(&report).unwrap();
    let forged = text.replacen(r#""relation": "at_most",
      "pass": true"#, r#""relation": "at_most",
      "pass": false"#, 1);
    assert_ne!(forged, text);
    let forged_path = write(dir.path(), "forged.json", &forged);
    let o = run(&["check", forged_path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("INCONSISTENT"));
}

#[test]
fn single_value_sweep_is_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("free_minimal.json");
    let (a, b) = (dir.path().join("run"), dir.path().join("sweep"));
    assert_eq!(run_in(&cfg, &a).status.code(), Some(0));
    let o = run(&[
        "sweep",
        cfg.to_str().unwrap(),
        "--axis",
        "dt",
        "--values",
        "0.01",
        "--out",
        b.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(
        std::fs::read(a.join("report.json")).unwrap(),
        std::fs::read(b.join("report.json")).unwrap()
    );
}

#[test]
fn unknown_sweep_axis_is_rejected() {
    let o = run(&[
        "sweep",
        config("free_minimal.json").to_str().unwrap(),
        "--axis",
        "temperature",
        "--values",
        "1,2",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sweep.axis"));
}

fn slope_row(csv_path: &Path) -> (Vec<String>, Vec<f64>) {
    let mut reader = csv::Reader::from_path(csv_path).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    let last = reader.records().map(|r| r.unwrap()).last().unwrap();
    assert_eq!(&last[0], "slope");
    let values = last.iter().skip(1).map(|v| v.parse::<f64>().unwrap_or(f64::NAN)).collect();
    (header, values)
}

#[test]
fn step_sweep_recovers_midpoint_order() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["sweep", config("sweep_dt.json").to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let (header, slopes) = slope_row(&dir.path().join("sweep_dt.csv"));
    let col = header.iter().position(|h| h == "s_discretization_error").unwrap() - 1;
    assert!((slopes[col] - 2.0).abs() <= 0.2, "slope {}", slopes[col]);
}

#[test]
fn amplitude_sweep_shows_cubic_dyson_remainder() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "sweep",
        config("sweep_amplitude.json").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--workers",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let (header, slopes) = slope_row(&dir.path().join("sweep_amplitude.csv"));
    let col = header.iter().position(|h| h == "dyson_remainder").unwrap() - 1;
    assert!(slopes[col] >= 2.7, "slope {}", slopes[col]);
}

#[test]
fn reports_do_not_depend_on_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("quadratic.json");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let args = |out: &Path, workers: &str| {
        run(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--workers", workers])
    };
    assert_eq!(args(&a, "1").status.code(), Some(0));
    assert_eq!(args(&b, "3").status.code(), Some(0));
    assert_eq!(
        std::fs::read(a.join("report.json")).unwrap(),
        std::fs::read(b.join("report.json")).unwrap()
    );
    let csv_a = std::fs::read(a.join("01_quadratic_oracle.csv")).unwrap();
    assert_eq!(csv_a, std::fs::read(b.join("01_quadratic_oracle.csv")).unwrap());
}
