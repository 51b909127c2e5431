use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const HEADER: &str = "t,lr,loss,aux_loss,grad_inf,distance,mask_count_total";

fn mofo(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mofo"))
        .current_dir(dir)
        .env_remove("MOFO_OUT_DIR")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

#[test]
fn run_writes_trace_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mofo(tmp.path(), &["run", "--steps", "20", "--out", "o"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let trace = fs::read_to_string(tmp.path().join("o/trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some(HEADER));
    assert_eq!(lines.count(), 20);
    assert!(tmp.path().join("o/summary.txt").exists());
    assert!(tmp.path().join("o/loss_curve.svg").exists());
}

#[test]
fn traces_are_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    for dir in ["a", "b"] {
        let out = mofo(tmp.path(), &["run", "--preset", "example1-d5", "--steps", "200", "--seed", "3", "--out", dir]);
        assert_eq!(code(&out), 0);
    }
    let a = fs::read(tmp.path().join("a/trace.csv")).unwrap();
    let b = fs::read(tmp.path().join("b/trace.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("exp.ini"), "optimizer = adam\nsteps = 7\nout = from-file\n").unwrap();
    let out = mofo(tmp.path(), &["run", "--config", "exp.ini", "--steps", "3"]);
    assert_eq!(code(&out), 0);
    let summary = fs::read_to_string(tmp.path().join("from-file/summary.txt")).unwrap();
    assert!(summary.contains("optimizer = adam"));
    assert!(summary.contains("steps = 3"));
}

#[test]
fn env_var_sets_output_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_mofo"))
        .current_dir(tmp.path())
        .env("MOFO_OUT_DIR", "via-env")
        .args(["run", "--steps", "2"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert!(tmp.path().join("via-env/trace.csv").exists());
}

#[test]
fn config_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&mofo(tmp.path(), &["run", "--alpha", "0"])), 1);
    assert_eq!(code(&mofo(tmp.path(), &["run", "--optimizer", "sgd"])), 1);
    assert_eq!(code(&mofo(tmp.path(), &["run", "--no-such-flag"])), 1);
    assert_eq!(code(&mofo(tmp.path(), &["run", "--config", "missing.ini"])), 1);
    assert_eq!(code(&mofo(tmp.path(), &["sweep", "--steps", "5"])), 1);
    fs::write(tmp.path().join("bad.ini"), "steps = lots\n").unwrap();
    assert_eq!(code(&mofo(tmp.path(), &["run", "--config", "bad.ini"])), 1);
}

#[test]
fn numeric_failure_exits_with_two_and_keeps_partial_trace() {
    let tmp = tempfile::tempdir().unwrap();
    // A huge step size on Example 1 overflows within a few steps.
    fs::write(tmp.path().join("boom.ini"), "optimizer = adam\nlr = 1e300\nsteps = 50\n").unwrap();
    let out = mofo(tmp.path(), &["run", "--config", "boom.ini", "--out", "o"]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    let trace = fs::read_to_string(tmp.path().join("o/trace.csv")).unwrap();
    assert!(trace.starts_with(HEADER));
    assert!(trace.lines().last().unwrap().contains("nan"));
}

#[test]
fn sweep_then_plot() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mofo(tmp.path(), &["sweep", "--alpha-grid", "50,100", "--steps", "30", "--out", "s"]);
    assert_eq!(code(&out), 0);
    let csv = fs::read_to_string(tmp.path().join("s/sweep.csv")).unwrap();
    assert!(csv.starts_with("alpha,final_loss,final_aux_loss,distance,status"));
    assert!(tmp.path().join("s/pareto_scatter.svg").exists());
    let out = mofo(tmp.path(), &["plot", "--input", "s/sweep.csv", "--kind", "distance_bar", "--output", "bar.svg"]);
    assert_eq!(code(&out), 0);
    assert!(fs::read_to_string(tmp.path().join("bar.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn verify_subset_reports_each_check() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mofo(tmp.path(), &["verify", "--only", "3,11"]);
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("[PASS]")).count(), 2, "{stdout}");
}
