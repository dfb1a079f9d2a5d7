use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn acf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_acf")).args(args).output().expect("binary runs")
}

fn scratch_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("acf-cli-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn ex31_geometry(dir: &Path) -> String {
    let path = dir.join("ex31.json");
    let out = acf(&["example", "ex31", "--geometry-out", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    path.to_str().unwrap().to_string()
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn green_reports_constants() {
    let dir = scratch_dir("green");
    let g = ex31_geometry(&dir);
    let csv = dir.join("grid.csv");
    let out = acf(&["green", &g, "--csv", csv.to_str().unwrap(), "--resolution", "40"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    for key in ["robin_constant", "capacity", "residual_norm"] {
        assert!(v[key]["value"].is_number(), "{key}: {v}");
    }
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("x,y,g\n"));
    assert!(text.lines().count() > 400);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("# acf "));
    assert!(stderr.contains("# tolerances: "));
}

#[test]
fn classify_marks_doubling_nonempty() {
    let dir = scratch_dir("classify");
    let g = ex31_geometry(&dir);
    let out = acf(&["classify", &g, "--z0", "0,0", "--lambda", "2", "--method", "green"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["verdict"]["outcome"], "NONEMPTY", "{v}");
    let out = acf(&["classify", &g, "--z0", "0,0", "--limit-points", "0.01,0.02", "--method", "green"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["verdict"]["outcome"], "EMPTY");
}

#[test]
fn trace_prints_csv() {
    let out = acf(&["trace", "--series", "geometric", "--lambda", "0.95", "--w", "0.5,0", "--from", "1", "--to", "5"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "n,modulus,log10_modulus");
    assert_eq!(lines.len(), 6);
}

#[test]
fn usage_and_precondition_errors_exit_2() {
    let dir = scratch_dir("usage");
    let g = ex31_geometry(&dir);
    let missing = dir.join("missing.json");
    let cases: Vec<Vec<&str>> = vec![
        vec!["green", missing.to_str().unwrap()],
        vec!["bogus"],
        vec!["classify", &g, "--z0", "5,0", "--lambda", "2"],
        vec!["construct", &g, "--z0", "0,0", "--p0", "0", "--u", "1", "--eps0", "1e-3", "--s0", "1", "--lambda", "5"],
        vec!["trace", "--coeffs", "1,x", "--lambda", "2", "--w", "1,0"],
        vec!["example", "ex31", "--theta0", "1"],
        vec!["green", &g, "--charges", "8"],
    ];
    for args in cases {
        let out = acf(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(out.stdout.is_empty(), "{args:?}");
    }
}

#[test]
fn numerical_failures_exit_3() {
    let dir = scratch_dir("numeric");
    let g = ex31_geometry(&dir);
    let args = [
        "construct",
        &g,
        "--z0",
        "0,0",
        "--p0",
        "0",
        "--u",
        "1",
        "--eps0",
        "1e-8",
        "--s0",
        "1",
        "--lambda",
        "2",
        "--nmax",
        "1",
    ];
    let out = acf(&args);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no degree up to 1"));
}

#[test]
fn every_subcommand_is_byte_deterministic() {
    let dir = scratch_dir("determinism");
    let g = ex31_geometry(&dir);
    let runs: Vec<Vec<&str>> = vec![
        vec!["green", &g],
        vec!["rho", &g, "--method", "both"],
        vec!["classify", &g, "--z0", "0,0", "--lambda", "2", "--method", "green"],
        vec!["construct", &g, "--z0", "0,0", "--p0", "0", "--u", "1", "--eps0", "0.1", "--s0", "1", "--lambda", "2"],
        vec!["trace", "--series", "geometric", "--lambda", "0.95", "--w", "0.5,0", "--from", "1", "--to", "50"],
        vec!["example", "ex31"],
        vec!["example", "ex33-unit-disk"],
    ];
    for args in runs {
        let a = acf(&args);
        let b = acf(&args);
        assert_eq!(a.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&a.stderr));
        assert!(!a.stdout.is_empty());
        assert_eq!(a.stdout, b.stdout, "{args:?} differs between runs");
    }
}
