//! Exit codes and output contracts of the `tla` binary.

use std::path::Path;
use std::process::{Command, Output};

fn tla(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tla")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const TINY: &str = r#""classifier": {"embed_dim": 4, "hidden_size": 4, "num_layers": 1, "dense_hidden": 4, "max_len": 6},
  "head": {"epochs": 5}"#;

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("config.json");
    std::fs::write(&p, format!("{{\"schema_version\": 1, {body}}}")).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn missing_dataset_exits_2_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#""data": {"train": "absent.csv"}, "output_dir": "out""#);
    let o = tla(&["train", "--config", &cfg]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("data.train"), "{}", stderr(&o));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn invalid_values_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#""data": {"builtin": "markers"}"#);
    assert_eq!(code(&tla(&["train", "--config", &cfg, "--theta", "1.5"])), 2);
    assert_eq!(code(&tla(&["train", "--config", &cfg, "--jobs", "0"])), 2);
    assert_eq!(code(&tla(&["train", "--bogus"])), 2);
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!(r#""model": "lstm", "data": {{"builtin": "markers"}}, "output_dir": "out", {TINY},
          "optimizer": {{"learning_rate": 1e300, "epochs": 5}}"#),
    );
    let o = tla(&["train", "--config", &cfg]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn train_then_evaluate_with_sweep_and_foreign_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!(r#""model": "lstm", "data": {{"builtin": "markers"}}, "output_dir": "run", {TINY},
          "optimizer": {{"epochs": 2}}"#),
    );
    let o = tla(&["--jobs", "1", "train", "--config", &cfg, "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let run = dir.path().join("run");

    let o = tla(&["evaluate", "--config", &cfg, "--theta", "0", "--sweep"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(run.join("eval/report.json")).unwrap()).unwrap();
    assert_eq!(report["report"]["coverage"], 1.0);
    let sweep = std::fs::read_to_string(run.join("eval/sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 22);
    assert!(stdout(&o).contains("LSTM"));

    let other = dir.path().join("other.csv");
    std::fs::write(&other, "id,text,label\n1,zebra quokka,NAG\n2,yak,OAG\n3,gnu,CAG\n").unwrap();
    let cfg2 = write_config(
        dir.path(),
        &format!(r#""model": "lstm", "data": {{"train": "other.csv"}}, "output_dir": "run2", {TINY},
          "optimizer": {{"epochs": 1}}"#),
    );
    assert_eq!(code(&tla(&["train", "--config", &cfg2])), 0);
    let cache = dir.path().join("other.tlc");
    let ck2 = dir.path().join("run2/checkpoint.tlc");
    let o = tla(&[
        "encode",
        "--checkpoint",
        ck2.to_str().unwrap(),
        "--dataset",
        other.to_str().unwrap(),
        "--out",
        cache.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = tla(&[
        "evaluate",
        "--checkpoint",
        run.join("checkpoint.tlc").to_str().unwrap(),
        "--dataset",
        cache.to_str().unwrap(),
        "--out",
        dir.path().join("bad-eval").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(!dir.path().join("bad-eval").exists());
}

#[test]
fn gradcheck_ops_passes_and_injected_fault_fails() {
    let o = tla(&["gradcheck", "--scope", "ops"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(!stdout(&o).contains("FAIL"));
    let o = tla(&["gradcheck", "--scope", "ops", "--inject-fault"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("worst offender"), "{}", stderr(&o));
}

#[test]
fn demo_recurrence_labels() {
    for (w, label) in [("2", "explodes"), ("0.5", "vanishes"), ("1", "neutral"), ("-3", "explodes")] {
        let o = tla(&["demo-recurrence", "--w", w, "--n", "5"]);
        assert_eq!(code(&o), 0);
        assert!(stdout(&o).ends_with(&format!("regime: {label}\n")), "{}", stdout(&o));
    }
}

#[test]
fn augment_writes_corpora_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#""data": {"builtin": "markers"}, "augmentation": {"fixture_seed": 2}"#);
    let out = dir.path().join("aug");
    let o = tla(&["augment", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("MISMATCH"));
    for f in [
        "semi-noisy/english-train.csv",
        "semi-noisy/hindi-test.csv",
        "fully-translated/english-train.csv",
        "reconciliation.json",
        "reconciliation.txt",
    ] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let header = std::fs::read_to_string(out.join("semi-noisy/bangla-train.csv")).unwrap();
    assert!(header.starts_with("id,text,label,language,provenance\n"));
}

#[test]
fn augment_shortfall_reports_per_class_detail() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("en.csv"), "id,text,label\ne1,you are good,NAG\n").unwrap();
    std::fs::write(d.join("hi.csv"), "id,text,label\nh1,तुम बुरा,OAG\n").unwrap();
    let cfg = write_config(
        d,
        r#""data": {"builtin": "markers"},
           "augmentation": {"raw": {"english": {"train": "en.csv", "test": "en.csv"},
                                    "hindi": {"train": "hi.csv", "test": "hi.csv"}},
                            "fully_translated": false,
                            "targets": {"english": {"NAG": 0, "OAG": 5, "CAG": 0}}}"#,
    );
    let o = tla(&["augment", "--config", &cfg, "--out", d.join("aug").to_str().unwrap()]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(stderr(&o).contains("english OAG: need 5, pool has 1 (short by 4)"), "{}", stderr(&o));
    assert!(!d.join("aug").exists());
}
