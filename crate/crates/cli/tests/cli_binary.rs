use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn cocreate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cocreate")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn reference_catalog() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/reference-catalog.json")
}

fn write_mutated(dir: &Path, f: impl FnOnce(&mut Value)) -> PathBuf {
    let mut doc: Value = serde_json::from_str(&std::fs::read_to_string(reference_catalog()).unwrap()).unwrap();
    f(&mut doc);
    let p = dir.join("catalog.json");
    std::fs::write(&p, doc.to_string()).unwrap();
    p
}

#[test]
fn catalog_validate_exit_codes() {
    let ok = cocreate(&["catalog", "validate", reference_catalog().to_str().unwrap()]);
    assert_eq!(ok.status.code(), Some(0), "{}", stderr(&ok));
    assert!(stdout(&ok).contains("9 offerings"));

    let dir = tempfile::tempdir().unwrap();
    let dangling = write_mutated(dir.path(), |d| d["rules"][0]["toSpecId"] = "ss-missing".into());
    let o = cocreate(&["catalog", "validate", dangling.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("ss-missing"));

    let garbage = dir.path().join("garbage.json");
    std::fs::write(&garbage, "{ not json").unwrap();
    assert_eq!(cocreate(&["catalog", "validate", garbage.to_str().unwrap()]).status.code(), Some(1));

    let missing = dir.path().join("absent.json");
    assert_eq!(cocreate(&["catalog", "validate", missing.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn bench_run_report_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench");
    let o = cocreate(&[
        "bench",
        "run",
        "--backend",
        "oracle",
        "--backend",
        "scripted:gpt-oss:20b",
        "--out",
        out.to_str().unwrap(),
        "--format",
        "csv",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = stdout(&o);
    assert!(csv.lines().nth(1).unwrap().starts_with("oracle,,4,100,0,Pass,Pass,Pass,0,"), "{csv}");
    assert!(csv.contains("gpt-oss:20b,reasoning,3,75,0,Pass,Pass,Partial,6,"), "{csv}");
    for ext in ["txt", "csv", "md"] {
        assert!(out.join(format!("report.{ext}")).is_file());
    }

    let rep = cocreate(&["bench", "report", out.to_str().unwrap(), "--format", "csv"]);
    assert_eq!(rep.status.code(), Some(0), "{}", stderr(&rep));
    assert_eq!(stdout(&rep).lines().count(), 3);

    let oracle = out.join("oracle");
    let r = cocreate(&["session", "replay", oracle.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(0), "{}{}", stdout(&r), stderr(&r));
    assert!(stdout(&r).contains("identical"));

    // A changed stored result must be reported, not silently accepted.
    let file = oracle.join("outcome.json");
    let mut doc: Value = serde_json::from_str(&std::fs::read_to_string(&file).unwrap()).unwrap();
    doc["session"]["stage"] = "Aborted".into();
    std::fs::write(&file, doc.to_string()).unwrap();
    let r = cocreate(&["session", "replay", file.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(1), "{}{}", stdout(&r), stderr(&r));
    assert!(stdout(&r).contains("stage"));

    std::fs::write(&file, "{").unwrap();
    assert_eq!(cocreate(&["session", "replay", file.to_str().unwrap()]).status.code(), Some(2));
    let absent = dir.path().join("none");
    assert_eq!(cocreate(&["session", "replay", absent.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn bench_run_reports_harness_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b");
    let o = cocreate(&["bench", "run", "--backend", "scripted:gpt-5", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("gpt-oss:20b"));
    let bad = dir.path().join("scenario.json");
    std::fs::write(&bad, "{}").unwrap();
    let o = cocreate(&["bench", "run", "--scenario", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn serve_rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "perTurnTimeout = 0\n").unwrap();
    let o = cocreate(&["serve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("perTurnTimeout"));
}
