use std::path::Path;
use std::process::{Command, Output};

fn bopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bopt-gmm")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = bopt(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn pipeline(dir: &Path) {
    let demos = dir.join("demos.jsonl");
    let model = dir.join("model.json");
    let run = dir.join("run");
    ok(&["gen-demos", "--task", "drawer", "--seed", "3", "--out", s(&demos)]);
    ok(&["fit", "--task", "drawer", "--demos", s(&demos), "--out", s(&model)]);
    ok(&[
        "optimize", "--task", "drawer", "--model", s(&model), "--seed", "5", "--budget", "80", "--modality", "mu+eig",
        "--out", s(&run),
    ]);
}

#[test]
fn pipeline_outputs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    for f in ["demos.jsonl", "model.json", "run/log_seed5.jsonl", "run/report.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let log = std::fs::read_to_string(a.path().join("run/log_seed5.jsonl")).unwrap();
    let observations = log.lines().filter(|l| l.starts_with("{\"update\"")).count();
    assert_eq!(observations, 10);
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"task": "door", "n_demos": 4, "seeds": [1, 2]}"#).unwrap();
    let demos = dir.path().join("d.jsonl");
    ok(&["gen-demos", "--config", s(&cfg), "--out", s(&demos)]);
    let text = std::fs::read_to_string(&demos).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.lines().next().unwrap().contains("\"task_id\":\"door\""));

    let model = dir.path().join("m.json");
    ok(&["fit", "--config", s(&cfg), "--demos", s(&demos), "--k", "3", "--out", s(&model)]);
    let online = dir.path().join("online");
    ok(&[
        "baseline-online", "--config", s(&cfg), "--k", "3", "--model", s(&model), "--demos", s(&demos), "--budget",
        "16", "--out", s(&online),
    ]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(online.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["method"], "online_gmm");
    assert_eq!(report["seeds"].as_array().unwrap().len(), 2);

    let rep = dir.path().join("rep");
    ok(&["report", s(&online.join("report.json")), "--out", s(&rep)]);
    assert!(std::fs::read_to_string(rep.join("report.csv")).unwrap().starts_with("method,task_id,"));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(rep.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["rows"][0]["seeds"], 2);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(bopt(&["report"]).status.code(), Some(2));
    assert_eq!(bopt(&["gen-demos", "--task", "window", "--out", "x"]).status.code(), Some(2));
    assert_eq!(bopt(&["frobnicate"]).status.code(), Some(2));
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"k\": \"five\"}").unwrap();
    assert_eq!(bopt(&["gen-demos", "--config", s(&bad), "--out", "x"]).status.code(), Some(2));
    let missing = dir.path().join("missing.json");
    let out = dir.path().join("o");
    assert_eq!(bopt(&["optimize", "--model", s(&missing), "--out", s(&out)]).status.code(), Some(3));
    let garbage = dir.path().join("garbage.json");
    std::fs::write(&garbage, "not json").unwrap();
    assert_eq!(bopt(&["report", s(&garbage), "--out", s(&out)]).status.code(), Some(3));
}
