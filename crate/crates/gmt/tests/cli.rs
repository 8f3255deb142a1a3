use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gmt::commands::{bench_memory, bench_time};
use gmt::config::{RunConfig, Task};

fn gmt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gmt")).args(args).output().unwrap()
}

fn data_dir() -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").display().to_string()
}

fn out_arg(dir: &Path) -> String {
    dir.display().to_string()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

#[test]
fn reconstruct_writes_its_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let o = gmt(&[
        "reconstruct",
        "--graph",
        "ring",
        "--n",
        "8",
        "--max-epochs",
        "30",
        "--out",
        &out_arg(dir.path()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("ring gmpool (k = 2"), "{stdout}");
    for f in [
        "nodes.csv",
        "edges.csv",
        "reconstruction.csv",
        "metrics.csv",
        "assignment.csv",
        "overlay.svg",
        "errors.csv",
    ] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
    assert_eq!(csv_rows(&dir.path().join("nodes.csv")).len(), 8);
    assert_eq!(csv_rows(&dir.path().join("edges.csv")).len(), 8);
    assert_eq!(csv_rows(&dir.path().join("metrics.csv")).len(), 30);
    let svg = fs::read_to_string(dir.path().join("overlay.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
}

#[test]
fn classify_writes_fold_results() {
    let dir = tempfile::tempdir().unwrap();
    let o = gmt(&[
        "classify",
        "--data-dir",
        &data_dir(),
        "--pool",
        "mean",
        "--hidden",
        "8",
        "--folds",
        "2",
        "--max-epochs",
        "2",
        "--out",
        &out_arg(dir.path()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("MUTAG mean:"), "{stdout}");
    assert_eq!(csv_rows(&dir.path().join("folds.csv")).len(), 2);
    assert_eq!(csv_rows(&dir.path().join("summary.csv")).len(), 1);
    assert!(dir.path().join("metrics_seed0_fold0.csv").exists());
}

#[test]
fn config_file_and_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    let out = dir.path().join("out");
    fs::write(&cfg, "task = bench-memory\nsweep = 20, 40\nmethods = gmt\n").unwrap();
    let o = gmt(&[
        "bench-memory",
        "--config",
        &cfg.display().to_string(),
        "--sweep",
        "30",
        "--out",
        &out_arg(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&out.join("bench_memory.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "30");
    assert_eq!(rows[0][2], "gmt");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_arg(dir.path());
    let usage = gmt(&["bench-memory", "--sweep", "0", "--out", &out]);
    assert_eq!(usage.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&usage.stderr).contains("sweep"));

    let wrong_task = dir.path().join("t.cfg");
    fs::write(&wrong_task, "task = classify\n").unwrap();
    let o = gmt(&["bench-time", "--config", &wrong_task.display().to_string(), "--out", &out]);
    assert_eq!(o.status.code(), Some(2));

    let missing = gmt(&["classify", "--data-dir", &out, "--dataset", "NOPE", "--out", &out]);
    assert_eq!(missing.status.code(), Some(3));

    let unknown_flag = gmt(&["classify", "--frobnicate"]);
    assert_eq!(unknown_flag.status.code(), Some(2));
}

fn bench_cfg(task: Task, dir: &Path, sweep: &[usize]) -> RunConfig {
    let mut c = RunConfig::defaults(task);
    c.sweep = sweep.to_vec();
    c.out = dir.to_path_buf();
    c
}

#[test]
fn memory_bench_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let c = bench_cfg(Task::BenchMemory, dir.path(), &[50, 100]);
    let a = bench_memory(&c).unwrap();
    let b = bench_memory(&c).unwrap();
    assert_eq!(a.len(), 4);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!((x.n, x.m, &x.method, x.peak_scalars), (y.n, y.m, &y.method, y.peak_scalars));
        assert_eq!(x.m, 2 * x.n);
    }
    for method in ["gmt", "cluster"] {
        let peaks: Vec<usize> = a.iter().filter(|r| r.method == method).map(|r| r.peak_scalars).collect();
        assert!(peaks[1] > peaks[0], "{method}: {peaks:?}");
    }
}

#[test]
fn time_bench_reports_positive_times() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = bench_cfg(Task::BenchTime, dir.path(), &[20, 40]);
    c.repeats = 2;
    c.batch_graphs = 4;
    let records = bench_time(&c).unwrap();
    assert_eq!(records.len(), 4);
    for r in &records {
        assert!(r.wall_ms > 0.0 && r.wall_ms.is_finite(), "{r:?}");
        assert_eq!(r.m, r.n * r.n / 10);
    }
    assert_eq!(csv_rows(&dir.path().join("bench_time.csv")).len(), 4);
}

#[test]
fn provenance_records_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let c = bench_cfg(Task::BenchMemory, dir.path(), &[10]);
    bench_memory(&c).unwrap();
    let json = fs::read_to_string(dir.path().join("run.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["command"], "bench-memory");
    assert_eq!(v["config"]["sweep"], "10");
    let text = fs::read_to_string(dir.path().join("config.txt")).unwrap();
    assert_eq!(RunConfig::parse(&text, None).unwrap(), c);
}
