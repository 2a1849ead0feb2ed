//! Binary surface: exit codes, reproducibility of outputs byte for byte,
//! and flag handling.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_coarse-forge")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("coarse-forge-cli-tests").join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_cfg(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn run(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(bin());
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn read_all_csvs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn passing_run_exits_zero_and_prints_table() {
    let dir = scratch("pass");
    let cfg = write_cfg(
        &dir,
        "run.cfg",
        &format!(
            "experiment = exactness\nmodel = torus-symplectic(1, 0.7)\nn_paths = 20\nT = 0.2\nseed = 1\nout = {}\n",
            dir.join("out").display()
        ),
    );
    let out = run(&[ "run", cfg.to_str().unwrap()], &[]);
    assert!(out.status.success(), "{out:?}");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("max_abs_error"), "{stdout}");
    assert!(dir.join("out/summary.csv").exists());
    assert!(dir.join("out/path_errors.csv").exists());

    let quiet = run(&["run", cfg.to_str().unwrap(), "--quiet"], &[]);
    assert!(quiet.status.success());
    assert!(quiet.stdout.is_empty());
}

#[test]
fn tolerance_failure_exits_one() {
    // nr-gauss with gamma > 0 is nowhere near the 1e-12 exactness threshold.
    let dir = scratch("tol");
    let cfg = write_cfg(
        &dir,
        "run.cfg",
        &format!(
            "experiment = exactness\nmodel = nr-gauss(4, 0.5)\nn_paths = 20\nT = 0.2\nseed = 1\nout = {}\n",
            dir.join("out").display()
        ),
    );
    let out = run(&["run", cfg.to_str().unwrap(), "--quiet"], &[]);
    assert_eq!(out.status.code(), Some(1), "{out:?}");
    // Outputs are still written for inspection.
    assert!(dir.join("out/summary.csv").exists());
}

#[test]
fn config_errors_exit_two_and_name_the_key() {
    let dir = scratch("cfg");
    let cases = [
        ("experiment = exactness\nmodel = nr-gauss(4,0.5)\nwibble = 3\n", "wibble"),
        ("experiment = exactness\nmodel = nr-gauss(4,0.5)\ndt = banana\n", "dt"),
        ("experiment = frobnicate\nmodel = nr-gauss(4,0.5)\n", "experiment"),
        ("experiment = exactness\nmodel = no-such-model(1)\n", "no-such-model"),
    ];
    for (i, (body, needle)) in cases.iter().enumerate() {
        let cfg = write_cfg(&dir, &format!("bad{i}.cfg"), body);
        let out = run(&["run", cfg.to_str().unwrap()], &[]);
        assert_eq!(out.status.code(), Some(2), "case {i}: {out:?}");
        let stderr = String::from_utf8_lossy(&out.stderr);
        assert!(stderr.contains(needle), "case {i}: stderr = {stderr}");
    }
    let missing = run(&["run", dir.join("nope.cfg").to_str().unwrap()], &[]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn runtime_divergence_exits_three() {
    // An absurd step size blows the Euler-Maruyama chain up to infinity.
    let dir = scratch("div");
    let cfg = write_cfg(
        &dir,
        "run.cfg",
        &format!(
            "experiment = exactness\nmodel = nr-gauss(4, 0.5)\ndt = 100\nT = 40000\nn_paths = 1\nseed = 1\nout = {}\n",
            dir.join("out").display()
        ),
    );
    let out = run(&["run", cfg.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(3), "{out:?}");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("non-finite"), "{stderr}");
}

#[test]
fn reruns_reproduce_csvs_byte_for_byte_across_thread_counts() {
    let dir = scratch("repro");
    let body = |out: &Path| {
        format!(
            "experiment = error-vs-bound\nmodel = var-diff(4, 0.5, 0.5)\nn_paths = 200\nT = 0.5\nsamples = 20000\ngrid_nodes = 501\nseed = 11\nout = {}\n",
            out.display()
        )
    };
    let cfg_a = write_cfg(&dir, "a.cfg", &body(&dir.join("a")));
    let cfg_b = write_cfg(&dir, "b.cfg", &body(&dir.join("b")));
    let cfg_c = write_cfg(&dir, "c.cfg", &body(&dir.join("c")));

    assert!(run(&["run", cfg_a.to_str().unwrap(), "--quiet"], &[]).status.success());
    assert!(run(&["run", cfg_b.to_str().unwrap(), "--quiet"], &[]).status.success());
    assert!(run(&["run", cfg_c.to_str().unwrap(), "--quiet"], &[("COARSE_FORGE_THREADS", "1")])
        .status
        .success());

    let a = read_all_csvs(&dir.join("a"));
    let b = read_all_csvs(&dir.join("b"));
    let c = read_all_csvs(&dir.join("c"));
    assert!(!a.is_empty());
    assert_eq!(a, b, "re-run with the same seed must reproduce every byte");
    assert_eq!(a, c, "the thread count must not change any output byte");
}

#[test]
fn seed_and_out_overrides_apply() {
    let dir = scratch("seed");
    let cfg = write_cfg(
        &dir,
        "run.cfg",
        &format!(
            "experiment = error-vs-bound\nmodel = nr-gauss(4, 0.5)\nn_paths = 100\nT = 0.2\nsamples = 20000\ngrid_nodes = 501\nseed = 1\nout = {}\n",
            dir.join("base").display()
        ),
    );
    assert!(run(&["run", cfg.to_str().unwrap(), "--quiet"], &[]).status.success());
    let o2 = dir.join("override");
    assert!(run(
        &["run", cfg.to_str().unwrap(), "--quiet", "--seed", "2", "--out", o2.to_str().unwrap()],
        &[]
    )
    .status
    .success());
    let base = fs::read(dir.join("base/path_errors.csv")).unwrap();
    let over = fs::read(o2.join("path_errors.csv")).unwrap();
    assert_ne!(base, over, "a different seed must change the ensemble");
}
