use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_geonimbus");

fn cuitzeo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/cuitzeo.toml")
}

fn geonimbus(args: &[&str], work_root: &Path) -> Output {
    Command::new(BIN).args(args).env("GEONIMBUS_WORK_ROOT", work_root).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn validate_accepts_the_shipped_spec() {
    let tmp = tempfile::tempdir().unwrap();
    let out = geonimbus(&["validate", cuitzeo().to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out).trim(), "ok");
}

#[test]
fn validate_reports_every_violation_with_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("bad.toml");
    fs::write(
        &spec,
        r#"
[system]
name = "bad"

[[endpoints]]
name = "e"
address = "127.0.0.1:1"
cores = 2

[[stages]]
name = "a"
kind = "function"
entry = "util.copy"
endpoint = "nowhere"

[[stages]]
name = "b"
kind = "function"
entry = "util.copy"
endpoint = "e"

[[links]]
from_stage = "a"
to_stage = "b"
channel = "file"

[[links]]
from_stage = "b"
to_stage = "a"
channel = "file"
"#,
    )
    .unwrap();
    let out = geonimbus(&["validate", spec.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let printed = stdout(&out);
    assert!(printed.lines().count() >= 2, "{printed}");
    assert!(printed.contains("nowhere"), "{printed}");
}

#[test]
fn unreadable_spec_is_a_validation_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let out = geonimbus(&["validate", tmp.path().join("missing.toml").to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn status_of_unknown_system_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let out = geonimbus(&["status", "ghost"], tmp.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn run_local_produces_one_summary_per_scene() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = tmp.path().join("fx");
    let made = geonimbus(&["make-fixtures", "--out", fx.to_str().unwrap(), "--count", "4", "--size", "64"], tmp.path());
    assert!(made.status.success(), "{}", String::from_utf8_lossy(&made.stderr));
    assert_eq!(fs::read_dir(fx.join("scenes")).unwrap().count(), 4);

    let out = tmp.path().join("out");
    let run = geonimbus(
        &[
            "run-local",
            cuitzeo().to_str().unwrap(),
            "--input",
            fx.join("input").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let summaries = fs::read_to_string(out.join("summaries.jsonl")).unwrap();
    assert_eq!(summaries.lines().count(), 4);
    assert!(out.join("trends.json").exists());
    assert!(out.join("run_report.json").exists());
}

#[test]
fn run_local_rejects_override_for_unknown_stage() {
    let tmp = tempfile::tempdir().unwrap();
    fs::create_dir(tmp.path().join("in")).unwrap();
    let out = geonimbus(
        &[
            "run-local",
            cuitzeo().to_str().unwrap(),
            "--input",
            tmp.path().join("in").to_str().unwrap(),
            "--out",
            tmp.path().join("out").to_str().unwrap(),
            "--workers",
            "nosuch=2",
        ],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bench_on_empty_input_reports_zero_items() {
    let tmp = tempfile::tempdir().unwrap();
    fs::create_dir(tmp.path().join("in")).unwrap();
    let out = geonimbus(
        &[
            "bench",
            cuitzeo().to_str().unwrap(),
            "--input",
            tmp.path().join("in").to_str().unwrap(),
            "--stage",
            "derivates",
            "--sweep",
            "1,2",
        ],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows: Vec<serde_json::Value> = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r["items"] == 0 && r["seconds"] == 0.0), "{rows:?}");
}

#[test]
fn deploy_against_absent_endpoints_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("s.toml");
    // Port 9 on loopback is reliably closed in test environments.
    fs::write(
        &spec,
        r#"
[system]
name = "far"

[[endpoints]]
name = "e"
address = "127.0.0.1:9"
cores = 1

[[stages]]
name = "a"
kind = "function"
entry = "util.copy"
endpoint = "e"
"#,
    )
    .unwrap();
    let out = geonimbus(&["deploy", spec.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
