//! End-to-end tests of the `ads` binary: report contents, exit codes, error
//! lines, and byte-level determinism of repeated runs.

use std::path::Path;
use std::process::{Command, Output};

fn ads() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ads"))
}

fn write(path: &Path, content: &str) {
    std::fs::write(path, content).unwrap();
}

fn blob_csv(n: usize, seed: u64) -> String {
    // tiny deterministic congruential stream; fixtures only
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
    let mut next = move || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 33) as f64 / (1u64 << 31) as f64
    };
    let mut rows = vec!["instance_id,source_id,label,f1,f2".to_string()];
    for i in 0..n {
        let class = i % 2;
        let (cx, cy) = if class == 0 { (0.0, 0.0) } else { (4.0, 4.0) };
        rows.push(format!(
            "q{i:03},s{i:03},c{class},{},{}",
            cx + next(),
            cy + next()
        ));
    }
    rows.join("\n") + "\n"
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn forced_two_source_game_report() {
    let dir = tempfile::tempdir().unwrap();
    write(
        &dir.path().join("data.csv"),
        "instance_id,source_id,label,f1,f2\na1,a,pos,0.0,0.0\nb1,b,pos,5.0,5.0\n",
    );
    write(
        &dir.path().join("test.csv"),
        "instance_id,source_id,label,f1,f2\nt1,t,pos,0.1,0.1\n",
    );
    write(
        &dir.path().join("groups.json"),
        r#"{"groups":[{"index":1,"source_ids":["a"]},{"index":2,"source_ids":["b"]}],
            "ownership":[{"source_id":"a","contributor_id":"alice"},
                         {"source_id":"b","contributor_id":"broker"}]}"#,
    );
    let out = ads()
        .args(["value", "--method", "exact-subset", "--utility", "one-nn"])
        .arg("--data")
        .arg(dir.path().join("data.csv"))
        .arg("--groups")
        .arg(dir.path().join("groups.json"))
        .arg("--test")
        .arg(dir.path().join("test.csv"))
        .arg("--out")
        .arg(dir.path().join("report.json"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let report = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(parsed["per_source"]["a"], 1.0);
    assert_eq!(parsed["per_source"]["b"], 0.0);
    assert_eq!(parsed["per_contributor"]["broker"], 0.0);
}

#[test]
fn mc_report_echoes_sample_size() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir.path().join("data.csv"), &blob_csv(10, 5));
    write(&dir.path().join("test.csv"), &blob_csv(4, 9));
    let out = ads()
        .args([
            "value", "--method", "mc", "--utility", "one-nn", "--epsilon", "0.1", "--delta",
            "0.1", "--seed", "42",
        ])
        .arg("--data")
        .arg(dir.path().join("data.csv"))
        .arg("--test")
        .arg(dir.path().join("test.csv"))
        .arg("--out")
        .arg(dir.path().join("report.json"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("sample-count 265"), "{}", stdout(&out));
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    assert_eq!(parsed["metadata"]["sample_count"], 265);
}

#[test]
fn knn_duplicate_of_nearest_neighbor_is_worthless() {
    let dir = tempfile::tempdir().unwrap();
    write(
        &dir.path().join("data.csv"),
        "instance_id,source_id,label,f1,f2\n\
         near,orig,pos,0.0,0.0\n\
         copy,dup,pos,0.0,0.0\n",
    );
    write(
        &dir.path().join("test.csv"),
        "instance_id,source_id,label,f1,f2\nt1,t,pos,0.1,0.1\n",
    );
    write(
        &dir.path().join("groups.json"),
        r#"{"groups":[{"index":1,"source_ids":["orig"]},{"index":2,"source_ids":["dup"]}],
            "ownership":[{"source_id":"orig","contributor_id":"alice"},
                         {"source_id":"dup","contributor_id":"broker"}]}"#,
    );
    let out = ads()
        .args(["value", "--method", "knn", "--k", "1"])
        .arg("--data")
        .arg(dir.path().join("data.csv"))
        .arg("--groups")
        .arg(dir.path().join("groups.json"))
        .arg("--test")
        .arg(dir.path().join("test.csv"))
        .arg("--out")
        .arg(dir.path().join("report.json"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    assert_eq!(parsed["per_source"]["dup"], 0.0);
    assert_eq!(parsed["per_source"]["orig"], 1.0);
}

#[test]
fn verify_fixtures_and_negative_control() {
    let ok = ads().arg("verify").output().unwrap();
    assert!(ok.status.success(), "{}", stdout(&ok));
    assert!(stdout(&ok).contains("all checks passed"));

    let lemma = ads().args(["verify", "--fixture", "lemma2"]).output().unwrap();
    assert!(lemma.status.success());
    assert!(stdout(&lemma).contains("round values: 1 0"), "{}", stdout(&lemma));

    let tampered = ads().args(["verify", "--fixture", "tampered"]).output().unwrap();
    assert_eq!(tampered.status.code(), Some(1));
    assert!(stdout(&tampered).contains("check tampered: FAIL"));
}

#[test]
fn validation_failure_exits_2_with_error_line() {
    let dir = tempfile::tempdir().unwrap();
    write(
        &dir.path().join("data.csv"),
        "instance_id,source_id,label,f1\na1,a,pos,0.0\nb1,b,pos,1.0\n",
    );
    write(
        &dir.path().join("groups.json"),
        r#"{"groups":[{"index":1,"source_ids":["a","b"]},{"index":2,"source_ids":["a"]}],
            "ownership":[{"source_id":"a","contributor_id":"x"},
                         {"source_id":"b","contributor_id":"y"}]}"#,
    );
    let out = ads()
        .args(["value", "--method", "exact-perm", "--utility", "sign-vote"])
        .arg("--data")
        .arg(dir.path().join("data.csv"))
        .arg("--groups")
        .arg(dir.path().join("groups.json"))
        .arg("--out")
        .arg(dir.path().join("report.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let first_line = stderr(&out).lines().next().unwrap_or_default().to_string();
    assert!(
        first_line.starts_with("ERROR OVERLAPPING_GROUPS "),
        "{first_line}"
    );
}

#[test]
fn enumeration_too_large_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut rows = vec!["instance_id,source_id,label,f1".to_string()];
    for i in 0..12 {
        rows.push(format!("q{i},s{i},+1,{}.0", i));
    }
    write(&dir.path().join("data.csv"), &(rows.join("\n") + "\n"));
    let out = ads()
        .args(["value", "--method", "exact-perm", "--utility", "sign-vote"])
        .arg("--data")
        .arg(dir.path().join("data.csv"))
        .arg("--out")
        .arg(dir.path().join("report.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).starts_with("ERROR ENUMERATION_TOO_LARGE "));
}

#[test]
fn criterion_10_byte_identical_repeated_runs() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir.path().join("data.csv"), &blob_csv(12, 31));
    write(&dir.path().join("test.csv"), &blob_csv(6, 77));

    let mut runs: Vec<(String, Vec<u8>)> = Vec::new();
    for rep in 0..2 {
        let report = dir.path().join(format!("mc{rep}.json"));
        let out = ads()
            .args([
                "value", "--method", "mc", "--utility", "one-nn", "--epsilon", "0.2", "--delta",
                "0.1", "--seed", "7",
            ])
            .arg("--data")
            .arg(dir.path().join("data.csv"))
            .arg("--test")
            .arg(dir.path().join("test.csv"))
            .arg("--out")
            .arg(&report)
            .env("ADS_THREADS", if rep == 0 { "1" } else { "4" })
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", stderr(&out));
        runs.push((stdout(&out), std::fs::read(&report).unwrap()));
    }
    assert_eq!(runs[0].0, runs[1].0, "mc stdout differs between runs");
    assert_eq!(runs[0].1, runs[1].1, "mc report differs between runs");

    let mut scenario_runs: Vec<(String, Vec<u8>, Vec<u8>)> = Vec::new();
    for rep in 0..2 {
        let curves = dir.path().join(format!("curves{rep}.json"));
        let out = ads()
            .args([
                "scenario",
                "--scenario",
                "sequential-noisy",
                "--seed",
                "11",
                "--seeds",
                "3",
            ])
            .arg("--out")
            .arg(&curves)
            .env("ADS_THREADS", if rep == 0 { "2" } else { "8" })
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", stderr(&out));
        scenario_runs.push((
            stdout(&out),
            std::fs::read(&curves).unwrap(),
            std::fs::read(curves.with_extension("csv")).unwrap(),
        ));
    }
    let identical = scenario_runs[0] == scenario_runs[1];
    assert_eq!(
        scenario_runs[0], scenario_runs[1],
        "scenario output differs between runs"
    );
    eprintln!(
        "criterion 10 (byte-identical repeated runs): {}",
        if identical { "pass" } else { "FAIL" }
    );
}
