use std::path::Path;
use std::process::{Command, Output};

use nalgebra::DMatrix;
use serde_json::Value;
use wntk::io::load_kernel;

fn wntk(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wntk"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("WNTK_OUT_DIR")
        .output()
        .unwrap()
}

fn ok(out: &Path, args: &[&str]) -> Value {
    let o = wntk(out, args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    let report = String::from_utf8(o.stdout).unwrap();
    let text = std::fs::read_to_string(report.trim()).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn write_csv(dir: &Path, name: &str, x: &DMatrix<f64>, labels: &[&str]) -> String {
    let mut body = (0..x.ncols()).map(|j| format!("f{j},")).collect::<String>() + "label\n";
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            body.push_str(&format!("{},", x[(i, j)]));
        }
        body.push_str(labels[i]);
        body.push('\n');
    }
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn report_layout() {
    let dir = tempfile::tempdir().unwrap();
    let r = ok(dir.path(), &["kernel", "--synthetic", "blobs:20", "--depth", "2"]);
    assert_eq!(r["schema"], "wntk.report/v1");
    assert_eq!(r["command"], "kernel");
    assert!(r.get("wall_time_seconds").is_none());
    assert!(r["args"].get("out").is_none());
    assert_eq!(r["config"]["shape"]["depth"], 2);
    assert_eq!(r["metrics"]["layers"].as_array().unwrap().len(), 2);
    let sha = r["metrics"]["ntk"]["sha256"].as_str().unwrap();
    let ntk = load_kernel(&dir.path().join("ntk.wntk")).unwrap();
    assert_eq!(sha, wntk::regression::kernel_hash(&ntk));

    let timed = ok(dir.path(), &["kernel", "--synthetic", "blobs:20", "--depth", "2", "--timing"]);
    assert!(timed["wall_time_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn unit_weights_write_identical_kernels() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["kernel", "--synthetic", "sphere:12", "--depth", "3", "--weights", "1,1,1"]);
    let read = |n: &str| std::fs::read(dir.path().join(n)).unwrap();
    assert_eq!(read("ntk.wntk"), read("wntk.wntk"));
    assert_eq!(read("ntk.csv"), read("wntk.csv"));

    ok(dir.path(), &["kernel", "--synthetic", "sphere:12", "--depth", "3", "--weights", "0,2,-0.5"]);
    assert_ne!(read("ntk.wntk"), read("wntk.wntk"));
}

#[test]
fn depth_one_kernel_is_scaled_gram_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let x = DMatrix::from_row_slice(4, 3, &[1.0, 0.5, -2.0, 0.0, 1.0, 3.0, -1.5, 2.0, 0.25, 4.0, -1.0, 1.0]);
    let data = write_csv(dir.path(), "d.csv", &x, &["a", "b", "a", "b"]);
    ok(dir.path(), &["kernel", "--data", &data, "--depth", "1"]);
    let k = load_kernel(&dir.path().join("ntk.wntk")).unwrap();
    let gram = &x * x.transpose() / 3.0;
    assert!(wntk::linalg::max_abs_diff(&k, &gram) < 1e-12);
}

#[test]
fn fit_separates_blobs() {
    let dir = tempfile::tempdir().unwrap();
    let r = ok(dir.path(), &["fit", "--synthetic", "blobs:60", "--depth", "3"]);
    assert_eq!(r["metrics"]["cv"]["mean_accuracy"].as_f64().unwrap(), 1.0);
    assert_eq!(r["metrics"]["cv"]["folds"].as_array().unwrap().len(), 5);
}

#[test]
fn zero_weight_step_gives_zero_delta() {
    let dir = tempfile::tempdir().unwrap();
    let r = ok(
        dir.path(),
        &["learn-weights", "--synthetic", "planted:60", "--depth", "3", "--eta-w", "0", "--iters", "4"],
    );
    assert_eq!(r["metrics"]["learn"]["delta"].as_f64().unwrap(), 0.0);
    for k in 0..5 {
        let trace = std::fs::read_to_string(dir.path().join(format!("trace_fold{k}.jsonl"))).unwrap();
        for line in trace.lines() {
            let v: Value = serde_json::from_str(line).unwrap();
            assert_eq!(v["weights"], serde_json::json!([1.0, 1.0, 1.0]));
        }
    }
}

#[test]
fn verify_commands_write_plots() {
    let dir = tempfile::tempdir().unwrap();
    let r = ok(dir.path(), &["verify-stability", "--widths", "16,32", "--seeds", "2", "--steps", "10"]);
    assert_eq!(r["config"]["widths"], serde_json::json!([16, 32]));
    assert_eq!(r["metrics"]["cells"].as_array().unwrap().len(), 4);
    let plot = std::fs::read_to_string(dir.path().join("stability_plot.csv")).unwrap();
    assert_eq!(plot.lines().count(), 3);
    ok(dir.path(), &["verify-lazy", "--widths", "16,32", "--seeds", "1", "--steps", "5", "--depth", "2"]);
    assert!(dir.path().join("lazy_plot.csv").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| wntk(dir.path(), args).status.code().unwrap();
    assert_eq!(code(&["fit", "--synthetic", "nope"]), 2);
    assert_eq!(code(&["kernel", "--synthetic", "blobs:20", "--depth", "3", "--weights", "1,1"]), 2);
    assert_eq!(code(&["verify-lazy", "--synthetic", "blobs"]), 2);
    assert_eq!(code(&["fit", "--synthetic", "blobs", "--activation", "swish"]), 2);
    assert_eq!(code(&["fit", "--data", "/nonexistent/x.csv"]), 4);

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "a,b\n1,x\nfoo,y\n").unwrap();
    let o = wntk(dir.path(), &["fit", "--data", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("row 3"));

    // Duplicated rows with conflicting labels make the unregularized system inconsistent.
    let singular = DMatrix::from_fn(8, 2, |i, j| if (i / 2) % 2 == j { 1.0 } else { 0.0 });
    let data = write_csv(dir.path(), "s.csv", &singular, &["a", "b", "a", "b", "a", "b", "a", "b"]);
    assert_eq!(code(&["fit", "--data", &data, "--depth", "2", "--reg", "0", "--folds", "2"]), 3);

    assert_eq!(code(&["no-such-command"]), 2);
    assert_eq!(code(&["fit", "--depth", "many"]), 2);
}

#[test]
fn out_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_wntk"))
        .args(["kernel", "--synthetic", "blobs:10", "--depth", "2"])
        .env("WNTK_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(dir.path().join("kernel.report.json").exists());
}
