//! Command-line surface checks: help text, flag handling, exit codes.

use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_fcexplain")
}

fn run(args: &[&str]) -> std::process::Output {
    Command::new(bin()).args(args).output().expect("spawn fcexplain")
}

#[test]
fn every_command_help_lists_flags_with_defaults() {
    for cmd in ["synth", "train", "attribute", "roar", "report", "check-grad"] {
        let out = run(&[cmd, "--help"]);
        assert!(out.status.success(), "{cmd} --help failed");
        let text = String::from_utf8_lossy(&out.stdout);
        assert!(text.contains("[default:"), "{cmd} --help has no defaults:\n{text}");
        assert!(text.contains("--jobs"), "{cmd} --help missing global --jobs");
    }
}

#[test]
fn unknown_flags_are_errors() {
    let out = run(&["train", "--data", "x.csv", "--out", "y", "--frobnicate"]);
    assert!(!out.status.success());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "synth",
        "--out",
        dir.path().join("d").to_str().unwrap(),
        "--high-fd-fraction",
        "2.0",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("config error"), "{err}");
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "train",
        "--data",
        dir.path().join("missing.csv").to_str().unwrap(),
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("data error"), "{err}");
}

#[test]
fn config_file_feeds_commands_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("settings.conf");
    std::fs::write(&conf, "[synth]\nsubjects = 10\nplanted = 3\nseed = 9\n").unwrap();
    let out_dir = dir.path().join("data");
    let out = run(&[
        "--config",
        conf.to_str().unwrap(),
        "synth",
        "--out",
        out_dir.to_str().unwrap(),
        "--planted",
        "5",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let planted = std::fs::read_to_string(out_dir.join("planted_edges.txt")).unwrap();
    assert_eq!(planted.lines().count(), 5, "flag should override config file");
    let echoed = std::fs::read_to_string(out_dir.join("synth_config.txt")).unwrap();
    assert!(echoed.contains("subjects = 10"));
    assert!(echoed.contains("planted = 5"));
    let manifest = std::fs::read_to_string(out_dir.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 11);
}

#[test]
fn check_grad_reports_and_exits_clean_on_small_dims() {
    let out = run(&["check-grad", "--dims", "30,12,4,2", "--samples", "80"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("max relative gradient error"), "{text}");
}
