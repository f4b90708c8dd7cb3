use std::process::Command;

fn run(bin: &str, args: &[&str]) -> std::process::Output {
    Command::new(bin).args(args).output().expect("spawn")
}

#[test]
fn loopback_demo_passes_and_sabotage_fails() {
    let ok = run(env!("CARGO_BIN_EXE_ubiq-loopback-demo"), &[]);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("ok pose"));
    let bad = run(env!("CARGO_BIN_EXE_ubiq-loopback-demo"), &["--sabotage"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("pose"));
}

#[test]
fn boids_cli_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("boids.csv");
    let out = run(env!("CARGO_BIN_EXE_ubiq-boids"), &["--steps", "50", "--report", report.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("consistent"));
    assert_eq!(std::fs::read_to_string(report).unwrap().lines().count(), 52);
}

#[test]
fn logtool_merges_and_summarises() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    std::fs::write(
        &a,
        concat!(
            r#"{"ticks":10,"peer":"a","event":"latency","args":{"to":"b","ms":2.0}}"#, "\n",
            r#"{"ticks":30,"peer":"a","event":"stats","args":{"window_start":0.0,"window_end":1.0,"bytes_in":70,"bytes_out":0,"categories":{"avatar":70},"message_count":1,"overhead_ratio":0.2}}"#, "\n",
        ),
    )
    .unwrap();
    std::fs::write(&b, concat!(r#"{"ticks":20,"peer":"b","event":"latency","args":{"to":"a","ms":4.0}}"#, "\n")).unwrap();

    let merged = dir.path().join("merged.jsonl");
    let out = run(env!("CARGO_BIN_EXE_ubiq-logtool"), &["merge", a.to_str().unwrap(), b.to_str().unwrap(), "--out", merged.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ticks: Vec<u64> = std::fs::read_to_string(&merged)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["ticks"].as_u64().unwrap())
        .collect();
    assert_eq!(ticks, vec![10, 20, 30]);

    let stats_dir = dir.path().join("stats");
    let out = run(env!("CARGO_BIN_EXE_ubiq-logtool"), &["stats", a.to_str().unwrap(), b.to_str().unwrap(), "--out-dir", stats_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let bandwidth = std::fs::read_to_string(stats_dir.join("bandwidth.csv")).unwrap();
    assert!(bandwidth.starts_with("t,bytes_total,bytes_avatar,bytes_rooms,bytes_log,overhead"));
    assert!(bandwidth.lines().nth(1).unwrap().starts_with("0,70,70,0,0,"));
    assert!(stats_dir.join("latency.csv").exists());
}

#[test]
fn logtool_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "not json\n").unwrap();
    let out = run(env!("CARGO_BIN_EXE_ubiq-logtool"), &["merge", bad.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.jsonl:1"));
}
