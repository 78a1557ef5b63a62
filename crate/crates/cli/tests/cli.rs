use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hyperlatent"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn audit_prints_density() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("h.txt"), "1 2 3\n2 3\n").unwrap();
    let out = ok(dir.path(), &["audit", "--input", "h.txt"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["density"].as_f64().unwrap() - 5.0 / 6.0).abs() < 1e-15);
    assert_eq!(v["null_vertices"].as_array().unwrap().len(), 0);
}

#[test]
fn simulate_fit_infer_pipeline() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(
        d.join("sim.toml"),
        "n = 100\nm = 200\nk = 2\nbeta_star = -1.0\nseed = 3\n",
    )
    .unwrap();
    ok(d, &["simulate", "--config", "sim.toml", "--out", "data"]);
    ok(
        d,
        &[
            "fit",
            "--input",
            "data/hyperlinks.txt",
            "--n",
            "100",
            "--k",
            "2",
            "--out",
            "fit",
        ],
    );
    ok(d, &["infer", "--fit", "fit/fit.json", "--out", "ci"]);
    let csv = fs::read_to_string(d.join("ci/intervals.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "target,index,estimate,variance,lo,hi,level"
    );
    // alpha_dagger and z for every vertex, f for every hyperlink
    assert_eq!(lines.count(), 3 * 100 + 2 * 200);

    ok(
        d,
        &[
            "ellipses",
            "--fit",
            "fit/fit.json",
            "--vertices",
            "1,5",
            "--out",
            "ell",
        ],
    );
    let ell: serde_json::Value =
        serde_json::from_slice(&fs::read(d.join("ell/ellipses.json")).unwrap()).unwrap();
    assert_eq!(ell.as_array().unwrap().len(), 2);
    assert!(fs::read_to_string(d.join("ell/ellipses.svg"))
        .unwrap()
        .contains("<svg"));
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(
        d.join("cov.toml"),
        "ns = [60]\nbetas = [0.0]\nreps = 2\nseed = 4\n",
    )
    .unwrap();
    fs::write(d.join("sim.toml"), "n = 50\nm = 80\nseed = 9\n").unwrap();
    for tag in ["a", "b"] {
        ok(
            d,
            &["experiment-coverage", "--config", "cov.toml", "--out", tag],
        );
        ok(d, &["simulate", "--config", "sim.toml", "--out", tag]);
        let input = format!("{tag}/hyperlinks.txt");
        ok(d, &["fit", "--input", &input, "--n", "50", "--out", tag]);
        let fit = format!("{tag}/fit.json");
        ok(d, &["ellipses", "--fit", &fit, "--out", tag]);
    }
    for file in [
        "coverage.csv",
        "hyperlinks.txt",
        "truth.json",
        "fit.json",
        "ellipses.json",
        "ellipses.svg",
    ] {
        let a = fs::read(d.join("a").join(file)).unwrap();
        let b = fs::read(d.join("b").join(file)).unwrap();
        assert!(a == b, "{file} differs");
    }
}

#[test]
fn failures_exit_with_documented_codes_and_no_partial_outputs() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(d.join("bad.txt"), "1 2\n3 x\n").unwrap();
    let out = run(d, &["fit", "--input", "bad.txt", "--out", "res"]);
    assert_eq!(out.status.code(), Some(3));
    let line: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(line["kind"], "data");
    assert!(!d.join("res").exists());

    fs::write(d.join("bad.toml"), "unknown_key = 1\n").unwrap();
    let out = run(d, &["simulate", "--config", "bad.toml", "--out", "res"]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(d, &["fit"]);
    assert_eq!(out.status.code(), Some(2));
}
