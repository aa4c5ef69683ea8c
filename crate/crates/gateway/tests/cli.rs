use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn reflex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reflex"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run reflex")
}

fn ok(args: &[&str]) -> String {
    let out = reflex(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

#[test]
fn generate_then_train_reports_heldout_auc() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    ok(&["--seed", "3", "generate", "--out", s(&corpus), "--sessions", "30"]);
    let model = dir.path().join("bc.json");
    let out = ok(&["--seed", "42", "train-backchannel", s(&corpus), "--out", s(&model)]);
    let report: Value = serde_json::from_str(&out).unwrap();
    assert!(report["heldout_auc"].as_f64().unwrap() >= 0.9, "{report}");
    assert!(model.exists());
}

#[test]
fn same_seed_gives_identical_models() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    ok(&["--seed", "4", "generate", "--out", s(&corpus), "--sessions", "10"]);
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    ok(&["--seed", "9", "train-trp", s(&corpus), "--out", s(&a)]);
    ok(&["--seed", "9", "train-trp", s(&corpus), "--out", s(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn empty_corpus_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let model = dir.path().join("m.json");
    let out = reflex(&["train-take", s(&empty), "--out", s(&model)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    assert!(!model.exists());
}

#[test]
fn missing_model_fails_before_writing_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.json");
    std::fs::write(&cfg, r#"{"models": {"trp": "nowhere/trp.json"}}"#).unwrap();
    let out_dir = dir.path().join("out");
    let out = reflex(&[
        "--config",
        s(&cfg),
        "replay",
        s(&fixtures().join("corpus")),
        "--out",
        s(&out_dir),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("trp.json"));
    assert!(!out_dir.exists());
}

#[test]
fn fixture_replay_matches_golden_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixtures().join("config.json");
    let corpus = fixtures().join("corpus");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["--config", s(&cfg), "--seed", "1", "replay", s(&corpus), "--out", s(&a)]);
    ok(&[
        "--config",
        s(&cfg),
        "--seed",
        "2",
        "--sequential",
        "replay",
        s(&corpus),
        "--out",
        s(&b),
    ]);
    let golden = std::fs::read_to_string(fixtures().join("expected_report.json")).unwrap();
    assert_eq!(std::fs::read_to_string(a.join("report.json")).unwrap(), golden);
    for name in ["session_0000", "session_0001", "session_0002"] {
        let f = format!("{name}.log.jsonl");
        assert_eq!(
            std::fs::read(a.join(&f)).unwrap(),
            std::fs::read(b.join(&f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn eval_scores_a_replayed_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixtures().join("config.json");
    let corpus = fixtures().join("corpus/session_0001.jsonl");
    ok(&["--config", s(&cfg), "replay", s(&corpus), "--out", s(dir.path())]);
    let report_path = dir.path().join("eval.json");
    let out = ok(&[
        "eval",
        "--log",
        s(&dir.path().join("session_0001.log.jsonl")),
        "--corpus",
        s(&corpus),
        "--out",
        s(&report_path),
    ]);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["sessions"], 1);
    assert!(v["backchannel"]["f1"].as_f64().is_some(), "{v}");
    let written: Value = serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(written, v);
    // A wider tolerance can only match more.
    let wide: Value = serde_json::from_str(&ok(&[
        "eval",
        "--log",
        s(&dir.path().join("session_0001.log.jsonl")),
        "--corpus",
        s(&corpus),
        "--tolerance-ms",
        "2000",
    ]))
    .unwrap();
    assert!(wide["backchannel"]["counts"]["matched"].as_u64() >= v["backchannel"]["counts"]["matched"].as_u64());
}

#[test]
fn unknown_subcommand_is_rejected() {
    assert!(!reflex(&["fly"]).status.success());
}
