use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn gtf(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gtf"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("run gtf")
}

fn json(out: &Path, name: &str) -> serde_json::Value {
    let text = std::fs::read_to_string(out.join(format!("{name}.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn kernel_reports_five_moment_residuals() {
    let dir = tempfile::tempdir().unwrap();
    let o = gtf(&["kernel", "--dim", "2", "--order", "3"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let j = json(dir.path(), "kernel");
    let res = j["values"]["moment_residuals"].as_array().unwrap();
    assert_eq!(res.len(), 5);
    assert!(res.iter().all(|r| r.as_f64().unwrap() < 1e-10));
    assert_eq!(j["seed"], 7);
    assert_eq!(j["pass"], true);
}

#[test]
fn killing_field_commutes() {
    let dir = tempfile::tempdir().unwrap();
    let m = data("halfplane.mf");
    let o = gtf(
        &["commute", "--manifold", m.to_str().unwrap(), "--field", "dx", "--vector", "X=d/dx"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let j = json(dir.path(), "commute");
    assert_eq!(j["values"]["verdict"], "commutes");
    assert!(j["values"]["killing_defect"].as_f64().unwrap() < 1e-8);
}

#[test]
fn delta_converges_weakly_on_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let o = gtf(
        &["embed", "--manifold", data("flat1d.mf").to_str().unwrap(), "--dist", data("delta.df").to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let j = json(dir.path(), "embed");
    assert!(j["slopes"]["weak"].as_f64().unwrap() >= 0.8);
    let csv = std::fs::read_to_string(dir.path().join("embed.csv")).unwrap();
    assert!(csv.starts_with("series,epsilon,value,error,slope_running\n"));
    assert_eq!(csv.lines().filter(|l| l.starts_with("weak,")).count(), 4);
}

#[test]
fn principal_value_fails_to_commute_with_a_match() {
    let dir = tempfile::tempdir().unwrap();
    let o = gtf(
        &[
            "commute",
            "--manifold",
            data("halfplane.mf").to_str().unwrap(),
            "--field",
            "pv",
            "--vector",
            "X=d/dy",
            "--order",
            "0",
            "--eps-start",
            "0.015625",
            "--eps-stop",
            "0.00390625",
            "--compare",
            data("flat2d.mf").to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let j = json(dir.path(), "commute");
    assert_eq!(j["values"]["verdict"], "fails-with-formula-match");
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let m = data("sphere.mf");
    let args = ["transport", "--manifold", m.to_str().unwrap(), "--grid", "3", "--seed", "5"];
    assert_eq!(gtf(&args, a.path()).status.code(), Some(0));
    assert_eq!(gtf(&args, b.path()).status.code(), Some(0));
    for f in ["transport.csv", "transport.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
    }
    let j = json(a.path(), "transport");
    assert_eq!(j["seed"], 5);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(data("curved1d.mf"), dir.path().join("line.mf")).unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "manifold = line.mf\ngrid = 2\nseed = 3\nformat = json\n").unwrap();
    let o = gtf(&["geodesic", "--config", cfg.to_str().unwrap(), "--seed", "4"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(!dir.path().join("geodesic.csv").exists());
    assert_eq!(json(dir.path(), "geodesic")["seed"], 4);
}

#[test]
fn failed_threshold_exits_one_and_names_the_check() {
    let dir = tempfile::tempdir().unwrap();
    let o = gtf(&["kernel", "--dim", "2", "--order", "3", "--eps-start", "4", "--eps-stop", "1"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("FAIL kernel-order"));
    assert_eq!(json(dir.path(), "kernel")["pass"], false);
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad_grid = gtf(&["kernel", "--eps-factor", "2"], dir.path());
    assert_eq!(bad_grid.status.code(), Some(2));
    assert!(stderr(&bad_grid).contains("eps-factor"));
    let missing = gtf(&["geodesic", "--manifold", "no-such.mf"], dir.path());
    assert_eq!(missing.status.code(), Some(2));
    let broken = dir.path().join("broken.mf");
    std::fs::write(&broken, "dim 2\ndomain -1 1 -1 1\nmetric [[1, 0], [0, 1 +]]\n").unwrap();
    let o = gtf(&["transport", "--manifold", broken.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("broken.mf"), "{}", stderr(&o));
    // grid point too close to the patch edge for the kernel support
    let o = gtf(
        &["embed", "--manifold", data("flat1d.mf").to_str().unwrap(), "--dist", data("delta.df").to_str().unwrap(), "--eps-start", "0.6", "--eps-stop", "0.1"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = gtf(&["commute", "--manifold", data("flat2d.mf").to_str().unwrap(), "--field", "dx", "--vector", "X=d/dq"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}
