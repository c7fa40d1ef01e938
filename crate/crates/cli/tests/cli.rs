//! The `slap` binary: exit codes, outputs and committed vectors.

use std::path::Path;
use std::process::{Command, Output};

use slap_cli::vectors::{generate, render, VectorModule};

fn slap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slap"))
        .args(args)
        .env_remove("SLAP_PROFILE")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn honest_run_exits_zero_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = slap(&["run", "rural_nd_query", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("via pol-nd"), "{stdout}");
    for f in ["report.json", "summary.txt", "trace.ndjson"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["scenario"], "rural_nd_query");
    let trace = std::fs::read_to_string(dir.path().join("trace.ndjson")).unwrap();
    assert_eq!(trace.lines().count() as u64, report["messages"].as_u64().unwrap());
}

#[test]
fn malformed_scenario_exits_two_with_a_located_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "version = 1\nid = \"bad\"\n\n[[holder]]\nname = \"a\"\nx = \"east\"\n").unwrap();
    let o = slap(&["run", path.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("bad.toml:6:"), "{err}");
}

#[test]
fn protocol_rejection_in_a_scenario_exits_one() {
    // The client sits outside every AP's coverage and has no neighbour.
    let text = r#"version = 1
id = "stranded"
[[holder]]
name = "alice"
x = 5000.0
y = 5000.0
device_id = "a"
device_class = "mobile"
[[ap]]
name = "ap-1"
x = 0.0
y = 0.0
region = "region-1"
[[server]]
name = "psd"
mode = "psd"
[[session]]
client = "alice"
server = "psd"
freq = 3560
report = { available = true, incumbent_class = 0, max_eirp_cdbm = 0 }
"#;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("stranded.toml");
    std::fs::write(&path, text).unwrap();
    let o = slap(&["run", path.to_str().unwrap()]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8(o.stderr).unwrap().contains("no access point"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&slap(&["attack", "teleport"])), 2);
    assert_eq!(code(&slap(&["bench", "query", "--reps", "3"])), 2);
    assert_eq!(code(&slap(&["--profile", "huge", "run", "honest_ap_query"])), 2);
    assert_eq!(code(&slap(&["frobnicate"])), 2);
    assert_eq!(code(&slap(&["--help"])), 0);
}

#[test]
fn attack_reports_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let o = slap(&["attack", "stale_ts", "--trials", "6", "--seed", "3", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("attacks.json")).unwrap()).unwrap();
    assert_eq!(v[0]["kind"], "stale_ts");
    assert_eq!(v[0]["accepted"], 0);
    assert_eq!(v[0]["trials"], 6);
}

#[test]
fn committed_vectors_match_regeneration() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("vectors");
    for m in VectorModule::ALL {
        let committed = std::fs::read_to_string(dir.join(m.file_name())).unwrap();
        assert_eq!(committed, render(&generate(m).unwrap()).unwrap(), "{m}");
    }
}

#[test]
fn vectors_subcommand_writes_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = slap(&["vectors", "dbp", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(dir.path().join("dbp.json").exists());
}
