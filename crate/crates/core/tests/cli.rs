use std::path::Path;
use std::process::{Command, Output};

fn pixmae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pixmae")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn exit_statuses() {
    assert_eq!(pixmae(&["--version"]).status.code(), Some(0));
    assert_eq!(pixmae(&["frobnicate"]).status.code(), Some(1));
    let out = pixmae(&["embed", "--ckpt", "/nonexistent.ckpt", "--data", "/nonexistent.pts", "--out", "/tmp/x.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let out = pixmae(&["pretrain", "--data", "/nonexistent.pts", "--out", "/tmp/x.ckpt"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("pixmae synth --out"));
}

#[test]
fn synth_then_flops() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.pts");
    let out = pixmae(&["synth", "--samples", "10", "--seed", "1", "--out", s(&data)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let first = std::fs::read(&data).unwrap();
    let manifest = std::fs::read_to_string(dir.path().join("d.pts.manifest.json")).unwrap();
    assert!(pixmae(&["synth", "--samples", "10", "--seed", "1", "--out", s(&data)]).status.success());
    assert_eq!(std::fs::read(&data).unwrap(), first);
    assert_eq!(std::fs::read_to_string(dir.path().join("d.pts.manifest.json")).unwrap(), manifest);

    let flops = dir.path().join("f.csv");
    assert!(pixmae(&["flops", "--input", "ms-pixel", "--mode", "encoder", "--out", s(&flops)]).status.success());
    let text = std::fs::read_to_string(&flops).unwrap();
    assert!(text.contains("2379392"), "{text}");
}
