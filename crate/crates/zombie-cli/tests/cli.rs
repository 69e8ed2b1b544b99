//! End-to-end checks of the `zombie` binary: flag handling, file layout,
//! reproducibility, and exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn zombie(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zombie"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

/// Sorted (file name, bytes) pairs of every file under `dir`.
fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut entries: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().into_string().unwrap(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    entries.sort();
    entries
}

const FAST_BATCH: &str = "\
[demo-flush]
experiment = flushflush

[demo-sweep]
experiment = model-sweep
grid_step = 0.5

[demo-benign]
experiment = benign
benign_kind = io-flush
benign_ops = 4000
mode = zbm
";

#[test]
fn run_writes_reports_and_exits_zero() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "batch.conf", FAST_BATCH);

    let out = zombie(
        &["run", &config, "--parallel", "3", "--out", "reports"],
        tmp.path(),
    );
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );

    let stdout = String::from_utf8(out.stdout).unwrap();
    for name in ["demo-flush", "demo-sweep", "demo-benign"] {
        assert!(stdout.contains(name), "summary misses {name}:\n{stdout}");
        assert!(
            tmp.path()
                .join("reports")
                .join(format!("{name}.csv"))
                .is_file(),
            "missing {name}.csv"
        );
    }
    assert!(stdout.contains("ok"));
    assert!(!stdout.contains("error"));
}

#[test]
fn reruns_write_byte_identical_reports() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "batch.conf", FAST_BATCH);

    for dir in ["first", "second"] {
        let out = zombie(&["run", &config, "--out", dir], tmp.path());
        assert!(out.status.success());
    }

    let first = dir_contents(&tmp.path().join("first"));
    let second = dir_contents(&tmp.path().join("second"));
    assert!(!first.is_empty());
    assert_eq!(
        first.iter().map(|(n, _)| n).collect::<Vec<_>>(),
        second.iter().map(|(n, _)| n).collect::<Vec<_>>()
    );
    for ((name, a), (_, b)) in first.iter().zip(&second) {
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn parse_errors_name_the_offending_line() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(
        tmp.path(),
        "bad.conf",
        "[broken]\nexperiment = aes\nbogus = 1\n",
    );

    let out = zombie(&["run", &config], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("line 3"), "stderr: {stderr}");
    assert!(stderr.contains("bogus"), "stderr: {stderr}");
}

#[test]
fn missing_config_file_fails_with_its_path() {
    let tmp = TempDir::new().unwrap();
    let out = zombie(&["run", "nowhere.conf"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("nowhere.conf"), "stderr: {stderr}");
}

#[test]
fn failing_scenarios_do_not_take_down_the_batch() {
    let tmp = TempDir::new().unwrap();
    // mem_latency 1 leaves no usable gap between hit and miss timing, so the
    // reload threshold check rejects the scenario at run time.
    let config = write_config(
        tmp.path(),
        "mixed.conf",
        "[bad-rsa]\nexperiment = rsa\nrsa_bits = 16\nmem_latency = 1\n\n\
         [good-flush]\nexperiment = flushflush\n",
    );

    let out = zombie(&["run", &config, "--out", "o"], tmp.path());
    assert_eq!(
        out.status.code(),
        Some(1),
        "mixed batch must signal failure"
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(
        stdout.contains("error"),
        "summary misses the failure:\n{stdout}"
    );
    assert!(tmp.path().join("o/good-flush.csv").is_file());
    assert!(!tmp.path().join("o/bad-rsa.csv").exists());
}

#[test]
fn seed_flag_overrides_scenario_seeds() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(
        tmp.path(),
        "seeded.conf",
        "[b]\nexperiment = benign\nbenign_kind = mix\nbenign_ops = 4000\nseed = 9\n",
    );

    for (dir, seed) in [("s1", "1"), ("s2", "2"), ("s9", "9")] {
        let out = zombie(&["run", &config, "--seed", seed, "--out", dir], tmp.path());
        assert!(out.status.success());
    }
    let base = zombie(&["run", &config, "--out", "plain"], tmp.path());
    assert!(base.status.success());

    let s1 = fs::read(tmp.path().join("s1/b.csv")).unwrap();
    let s2 = fs::read(tmp.path().join("s2/b.csv")).unwrap();
    let s9 = fs::read(tmp.path().join("s9/b.csv")).unwrap();
    let plain = fs::read(tmp.path().join("plain/b.csv")).unwrap();
    assert_ne!(s1, s2, "different seeds must change the workload");
    assert_eq!(s9, plain, "--seed equal to the configured seed is a no-op");
}

#[test]
fn paper_scale_flag_is_accepted() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "p.conf", "[f]\nexperiment = flushflush\n");

    let out = zombie(&["run", &config, "--paper-scale", "--out", "o"], tmp.path());
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(tmp.path().join("o/f.csv").is_file());
}
