use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

/// Runs the binary with the toy config, a private work directory and short
/// training.
fn effqa(work: &Path, args: &[&str]) -> Output {
    let root = root();
    Command::new(env!("CARGO_BIN_EXE_effqa"))
        .args(args)
        .arg("--config")
        .arg(root.join("configs/toy.conf"))
        .arg("--paths.train")
        .arg(work.join("train.json"))
        .arg("--paths.dev")
        .arg(work.join("dev.json"))
        .arg("--paths.work")
        .arg(work.join("out"))
        .args(["--extractor.epochs", "1", "--dual.epochs", "1"])
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for f in ["train.json", "dev.json"] {
        std::fs::copy(root().join("data/toy").join(f), dir.path().join(f)).unwrap();
    }
    dir
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.path().is_file())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
        .collect();
    v.sort();
    v
}

const STAGES: [&str; 6] = ["ingest", "train-extractor", "extract-candidates", "train-encoder", "build-index", "evaluate"];

#[test]
fn stages_are_idempotent_and_leave_inputs_alone() {
    let dir = setup();
    let inputs = snapshot(dir.path());
    for stage in STAGES {
        ok(&effqa(dir.path(), &[stage]));
    }
    let first = snapshot(&dir.path().join("out"));
    for stage in STAGES {
        ok(&effqa(dir.path(), &[stage]));
    }
    assert_eq!(snapshot(&dir.path().join("out")), first);
    assert_eq!(snapshot(dir.path()), inputs);

    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("out/eval_report.json")).unwrap()).unwrap();
    for key in ["exact_match", "f1", "n", "per_question"] {
        assert!(report.get(key).is_some(), "report lacks {key}");
    }
    assert_eq!(report["n"], 160);

    let out = ok(&effqa(dir.path(), &["query", "--question", "which city is named ?", "--context-id", "0_0"]));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 5, "{out}");
    assert!(lines.iter().all(|l| l.contains("0_0")));
    let out = ok(&effqa(dir.path(), &["query", "--question", "which city is named ?", "--top-k", "2"]));
    assert_eq!(out.lines().count(), 2);
}

#[test]
fn exit_codes() {
    let dir = setup();
    let unknown = effqa(dir.path(), &["frobnicate"]);
    assert_eq!(unknown.status.code(), Some(1));

    let bad_key = effqa(dir.path(), &["ingest", "--beam.width", "3"]);
    assert_eq!(bad_key.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad_key.stderr).contains("beam.width"));

    ok(&effqa(dir.path(), &["ingest"]));
    let missing = effqa(dir.path(), &["evaluate"]);
    assert_eq!(missing.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&missing.stderr).into_owned();
    assert!(msg.contains("dual.eqnn"), "{msg}");

    std::fs::write(dir.path().join("dev.json"), "{not json").unwrap();
    let broken = effqa(dir.path(), &["ingest"]);
    assert_eq!(broken.status.code(), Some(2));
}

#[test]
fn config_from_environment() {
    let dir = setup();
    let conf = dir.path().join("env.conf");
    std::fs::write(&conf, format!("paths.train = {}\npaths.work = {}\n", dir.path().join("train.json").display(), dir.path().join("envout").display())).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_effqa")).arg("ingest").env("EFFQA_CONFIG", &conf).env("RUST_LOG", "warn").output().unwrap();
    ok(&out);
    assert!(dir.path().join("envout/vocab.txt").exists());
}

#[test]
fn selftest_passes() {
    let out = Command::new(env!("CARGO_BIN_EXE_effqa")).arg("selftest").output().unwrap();
    let text = ok(&out);
    assert!(text.lines().count() >= 7);
    assert!(text.lines().all(|l| l.starts_with("PASS")), "{text}");
}
