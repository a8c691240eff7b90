use std::path::Path;
use std::process::{Command, Output};

fn aclkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aclkit")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = aclkit(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn no_arguments_prints_usage_and_fails() {
    let out = aclkit(&[]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = aclkit(&["frobnicate"]);
    assert!(!out.status.success());
    let out = aclkit(&["train", "--no-such-flag"]);
    assert!(!out.status.success());
}

#[test]
fn config_typos_are_rejected_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"train": {"config": {"epochz": 3}}}"#).unwrap();
    let out = aclkit(&["train", "--config", s(&cfg)]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("epochz"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
}

#[test]
fn severity_tables_dump_lists_every_kind() {
    let out = ok(&["corrupt", "--dump-severity-tables"]);
    let tables: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for kind in ["gaussian_noise", "glass_blur", "fog", "saturate"] {
        assert_eq!(tables["tables"][kind].as_array().unwrap().len(), 5, "{kind}");
    }
}

#[test]
fn fog_corruption_changes_every_image() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let fog = dir.path().join("fog");
    ok(&["gen", "--output", s(&data), "--classes", "3", "--per-class", "4", "--size", "16", "--seed", "1"]);
    ok(&["corrupt", "--dataset", s(&data), "--output", s(&fog), "--kind", "fog", "--severity", "3", "--seed", "7"]);
    let a = aclkit::data::load_dataset_dir(&data).unwrap();
    let b = aclkit::data::load_dataset_dir(&fog).unwrap();
    assert_eq!(a.len(), b.len());
    assert_eq!(a.labels, b.labels);
    for (x, y) in a.images.iter().zip(&b.images) {
        assert_eq!(x.dims(), y.dims());
        assert_ne!(x, y);
    }
}

#[test]
fn train_eval_report_chain_writes_parseable_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    ok(&["gen", "--output", s(&p("data")), "--classes", "2", "--per-class", "6", "--size", "16", "--seed", "3"]);
    let cfg = p("run.json");
    std::fs::write(
        &cfg,
        r#"{"train": {"config": {"epochs": 1, "batch_size": 6, "attack": {"radius": 0.03, "step_size": 0.01, "iterations": 1}}},
            "eval": {"attack": {"radius": 0.03, "step_size": 0.01, "iterations": 2}}}"#,
    )
    .unwrap();
    for recipe in ["standard", "acl"] {
        let run = p(recipe);
        ok(&["train", "--config", s(&cfg), "--dataset", s(&p("data")), "--output", s(&run), "--recipe", recipe, "--threads", "1"]);
        assert!(run.join("checkpoint.bin").is_file());
        assert_eq!(json(&run.join("history.json"))["epochs"].as_array().unwrap().len(), 1);
        // the resolved config reloads to itself
        let resolved = json(&run.join("run_config.json"));
        assert_eq!(resolved["train"]["recipe"], recipe);
        let again = dir.path().join(format!("{recipe}-again"));
        ok(&["train", "--config", s(&run.join("run_config.json")), "--output", s(&again)]);
        assert_eq!(
            std::fs::read(run.join("checkpoint.bin")).unwrap(),
            std::fs::read(again.join("checkpoint.bin")).unwrap()
        );
        let ev = p(&format!("{recipe}-eval"));
        ok(&["eval", "--config", s(&cfg), "--dataset", s(&p("data")), "--checkpoint", s(&run.join("checkpoint.bin")), "--output", s(&ev)]);
        let record = json(&ev.join("perf_record.json"));
        assert_eq!(record["label"], recipe);
        assert_eq!(record["corruption"].as_array().unwrap().len(), 19);
    }
    let out = ok(&[
        "report",
        "--output",
        s(&p("report")),
        s(&p("standard-eval/perf_record.json")),
        s(&p("acl-eval/perf_record.json")),
    ]);
    let text = std::fs::read_to_string(p("report/report.txt")).unwrap();
    assert_eq!(String::from_utf8_lossy(&out.stdout), text);
    assert!(text.contains("Average of 19 corruptions"));
    let report = json(&p("report/report.json"));
    assert_eq!(report["columns"], serde_json::json!(["standard", "acl"]));
    assert_eq!(report["rows"].as_array().unwrap().len(), 22);

    let adv = p("adv");
    ok(&["attack", "--dataset", s(&p("data")), "--checkpoint", s(&p("acl/checkpoint.bin")), "--output", s(&adv), "--iterations", "3"]);
    let summary = json(&adv.join("attack_summary.json"));
    assert_eq!(summary["images"], 12);
    assert_eq!(summary["ball_violations"], 0);
    assert_eq!(aclkit::data::load_dataset_dir(&adv.join("images")).unwrap().len(), 12);
}
