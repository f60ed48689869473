use std::process::{Command, Output};

fn gbml(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gbml")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn toy_writes_all_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("toy.toml");
    std::fs::write(&cfg, "kind = \"toy\"\n[toy]\nmeta_iterations = 50\nnum_inits = 5\n").unwrap();
    let out = dir.path().join("out");
    let o = gbml(&["toy", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["toy.csv", "toy_summary.csv", "toy_density.csv"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("wrote ")).count(), 3);
}

#[test]
fn missing_config_file_is_an_io_error() {
    let o = gbml(&["toy", "--config", "/nonexistent/toy.toml"]);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error[io]"), "{}", stderr(&o));
}

#[test]
fn config_for_another_verb_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "kind = \"toy\"\n").unwrap();
    let o = gbml(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.starts_with("error[config]") && e.contains("kind"), "{e}");
}

#[test]
fn malformed_config_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "kind = \"toy\"\n\n[toy]\nbins = \"many\"\n").unwrap();
    let o = gbml(&["toy", "--config", cfg.to_str().unwrap()]);
    assert!(!o.status.success());
    let e = stderr(&o);
    assert!(e.starts_with("error[config]") && e.contains('4'), "{e}");
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("bad.ckpt");
    std::fs::write(&ckpt, b"gbml-checkpoint\nversion 1\n").unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(
        &cfg,
        format!("kind = \"eval\"\nalgorithm = \"fomaml\"\ncheckpoint = {:?}\n", ckpt.to_str().unwrap()),
    )
    .unwrap();
    let o = gbml(&["eval", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error[checkpoint]"), "{}", stderr(&o));
}

#[test]
fn unknown_verb_fails() {
    assert!(!gbml(&["frobnicate"]).status.success());
}
