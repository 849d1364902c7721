//! CLI contract tests: exit codes, config-file handling, and flag
//! precedence, exercised on tiny corpora so the whole file runs in seconds.

use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_malafide");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn malafide")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn malafide")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn unknown_attack_name_exits_2_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("data");
    let out = run(&[
        "gen-data",
        "--bona",
        "8",
        "--height",
        "32",
        "--width",
        "32",
        "--attacks",
        "region-swap,bogus",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("bogus"));
    // atomicity: nothing was partially written
    assert!(
        !out_dir.join("manifest.csv").exists(),
        "manifest must not exist after a rejected run"
    );
}

#[test]
fn config_file_with_unknown_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "[corpus]\nbona = 8\nnonsense_key = 3\n").unwrap();
    let out = run(&[
        "gen-data",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("d").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("nonsense_key"));
}

#[test]
fn missing_config_file_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "gen-data",
        "--config",
        tmp.path().join("absent.toml").to_str().unwrap(),
        "--out",
        tmp.path().join("d").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn flags_override_config_which_overrides_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.toml");
    // config asks for 10 bona / 48x32; the flag forces 12 bona. Height
    // stays at the config value, proving both layers are consulted.
    std::fs::write(
        &cfg,
        "[corpus]\nbona = 10\nheight = 48\nwidth = 32\nattacks = [\"texture-noise\"]\n",
    )
    .unwrap();
    let out_dir = tmp.path().join("data");
    let out = run(&[
        "gen-data",
        "--config",
        cfg.to_str().unwrap(),
        "--bona",
        "12",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(stdout.contains("12 bona fide"), "stdout: {stdout}");
    assert!(stdout.contains("48x32"), "stdout: {stdout}");
    assert!(stdout.contains("1 attacks"), "stdout: {stdout}");
}

#[test]
fn eval_lists_every_missing_filter_and_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let models = tmp.path().join("models");
    assert_eq!(
        run(&[
            "gen-data",
            "--bona",
            "8",
            "--height",
            "32",
            "--width",
            "32",
            "--attacks",
            "region-swap",
            "--out",
            data.to_str().unwrap(),
        ])
        .status
        .code(),
        Some(0)
    );
    let out = run_in(
        tmp.path(),
        &[
            "train-detector",
            "--arch",
            "a",
            "--data",
            "data",
            "--epochs",
            "1",
            "--out",
            "models",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let empty = tmp.path().join("nofilters");
    std::fs::create_dir(&empty).unwrap();
    let out = run(&[
        "eval",
        "--data",
        data.to_str().unwrap(),
        "--detector",
        models.join("detector_a.bin").to_str().unwrap(),
        "--filters",
        empty.to_str().unwrap(),
        "--sizes",
        "3,27",
        "--out",
        tmp.path().join("eval").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    for name in ["filter_region-swap_3_a.bin", "filter_region-swap_27_a.bin"] {
        assert!(err.contains(name), "stderr should list {name}: {err}");
    }
}

#[test]
fn even_filter_size_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert_eq!(
        run(&[
            "gen-data",
            "--bona",
            "8",
            "--height",
            "32",
            "--width",
            "32",
            "--attacks",
            "region-swap",
            "--out",
            data.to_str().unwrap(),
        ])
        .status
        .code(),
        Some(0)
    );
    let models = tmp.path().join("models");
    assert_eq!(
        run(&[
            "train-detector",
            "--arch",
            "a",
            "--data",
            data.to_str().unwrap(),
            "--epochs",
            "1",
            "--out",
            models.to_str().unwrap(),
        ])
        .status
        .code(),
        Some(0)
    );
    let out = run(&[
        "train-filter",
        "--data",
        data.to_str().unwrap(),
        "--detector",
        models.join("detector_a.bin").to_str().unwrap(),
        "--attack",
        "region-swap",
        "--size",
        "4",
        "--out",
        tmp.path().join("f").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
}
