use std::fs;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_seqdesign"))
}

#[test]
fn lists_problems_and_criteria() {
    let out = bin().arg("list-problems").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in seqdesign::problems::PROBLEM_NAMES {
        assert!(text.contains(name), "{name} missing");
    }
    let out = bin().arg("list-criteria").output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["maxvar", "minimse", "kleicrit", "adjmmse", "cokriging-adj"] {
        assert!(text.contains(name));
    }
}

#[test]
fn run_then_replay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"problem": "ackley", "criterion": "maxvar", "replicates": 2, "initial": [6],
            "budget": 3, "seed": 4, "output": "out"}"#,
    )
    .unwrap();
    let status = bin().args(["run", "--config"]).arg(&cfg).args(["--seed", "9"]).status().unwrap();
    assert_eq!(status.code(), Some(0));
    let manifest = dir.path().join("out/manifest.json");
    let text = fs::read_to_string(&manifest).unwrap();
    assert!(text.contains("\"seed\": 9"));
    let summary = fs::read_to_string(dir.path().join("out/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 4);
    let out = bin().args(["replay", "--manifest"]).arg(&manifest).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8(out.stdout).unwrap().contains("summary.csv: match"));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    assert_eq!(bin().args(["run", "--config"]).arg(&missing).status().unwrap().code(), Some(2));
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"problem": "nowhere", "criterion": "maxvar", "initial": [6], "budget": 1}"#).unwrap();
    assert_eq!(bin().args(["run", "--config"]).arg(&bad).status().unwrap().code(), Some(2));
    fs::write(&bad, r#"{"problem": "tank-r1", "criterion": "maxvar", "initial": [20, 10], "budget": 1}"#).unwrap();
    assert_eq!(bin().args(["run", "--config"]).arg(&bad).status().unwrap().code(), Some(2));
    assert_eq!(bin().arg("frobnicate").status().unwrap().code(), Some(2));
}

#[test]
fn tampered_manifest_replay_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"problem": "shubert", "criterion": "adjmmse", "replicates": 1, "initial": [6],
            "budget": 2, "output": "out"}"#,
    )
    .unwrap();
    assert_eq!(bin().args(["run", "--config"]).arg(&cfg).status().unwrap().code(), Some(0));
    let manifest = dir.path().join("out/manifest.json");
    let mut m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    m["checksums"][0][1] = serde_json::Value::String("00".into());
    fs::write(&manifest, serde_json::to_string(&m).unwrap()).unwrap();
    let code = bin().args(["replay", "--manifest"]).arg(&manifest).status().unwrap().code();
    assert_eq!(code, Some(3));
}
