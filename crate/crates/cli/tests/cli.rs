mod common;

use common::{cli_at, stderr, stdout, write, Service};
use slicefab_core::bench::read_csv;
use slicefab_core::orchestrator::SliceState;

const GOOD: &str = r#"{"id": "cam-line", "tenant": "po",
  "vfs": [{"name": "cam", "kind": "VAF", "demand": {"cpu_millicores": 200, "memory_mb": 64}},
          {"name": "ai", "kind": "VNF", "demand": {"cpu_millicores": 300, "memory_mb": 64}}],
  "vlinks": [{"endpoint_a": "cam", "endpoint_b": "ai", "bandwidth_mbps": 5, "max_latency_ms": 10}],
  "streams": [{"id": "frames", "producer": "cam", "sensitivity": "CONFIDENTIAL"}]}"#;

#[test]
fn bench_fig6_vf_prints_eight_rows() {
    let svc = Service::start();
    let out = svc.cli(&["bench", "fig6", "--mode", "vf"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let samples = read_csv(&stdout(&out)).unwrap();
    assert_eq!(samples.len(), 8);
    assert_eq!(samples.last().unwrap().running_after, 80);
}

#[test]
fn bench_writes_csv_svg_and_events() {
    let svc = Service::start();
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("vf.csv");
    let svg = dir.path().join("fig6.svg");
    let events = dir.path().join("events.ndjson");
    let out = svc.cli(&[
        "bench",
        "fig6",
        "--mode",
        "empty",
        "--csv",
        csv.to_str().unwrap(),
        "--svg",
        svg.to_str().unwrap(),
        "--events",
        events.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("wrote 8 rows"));
    assert_eq!(
        read_csv(&std::fs::read_to_string(csv).unwrap())
            .unwrap()
            .len(),
        8
    );
    let plot = std::fs::read_to_string(svg).unwrap();
    assert_eq!(plot.matches("<polyline").count(), 2);
    assert!(std::fs::read_to_string(events).unwrap().lines().count() >= 8 * 4);
}

#[test]
fn bad_blueprint_exits_one_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.json", &GOOD.replace("200", "-200"));
    // No server is needed: the file is rejected before any request.
    let out = cli_at("http://127.0.0.1:9", None, &["request", &bad]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr(&out).contains("/vfs/0/demand/cpu_millicores"),
        "{}",
        stderr(&out)
    );

    let dangling = write(
        dir.path(),
        "dangling.json",
        &GOOD.replace("\"endpoint_b\": \"ai\"", "\"endpoint_b\": \"nope\""),
    );
    let out = cli_at("http://127.0.0.1:9", None, &["request", &dangling]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("/vlinks/0/endpoint_b"));
}

#[test]
fn unreachable_server_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let good = write(dir.path(), "good.json", GOOD);
    let out = cli_at("http://127.0.0.1:9", None, &["request", &good]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn request_status_terminate_lifecycle() {
    let svc = Service::start();
    let dir = tempfile::tempdir().unwrap();
    let good = write(dir.path(), "good.json", GOOD);
    let out = svc.cli(&["request", &good]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let id = stdout(&out).trim().to_string();

    let out = svc.cli(&["status", &id]);
    assert_eq!(out.status.code(), Some(0));
    let state = stdout(&out).lines().next().unwrap().to_string();
    assert!(SliceState::from_name(&state).is_some(), "{state}");

    let out = svc.cli_as("pm", &["terminate", &id]);
    assert_eq!(out.status.code(), Some(2));
    let out = svc.cli(&["terminate", &id]);
    assert_eq!(out.status.code(), Some(1), "a tenant is required");
    let out = svc.cli_as("po", &["terminate", &id]);
    assert_eq!(stdout(&out).trim(), "TERMINATED");
    assert_eq!(svc.cli(&["status", "s999999"]).status.code(), Some(2));
}

#[test]
fn request_wait_reports_placement() {
    let svc = Service::start();
    let dir = tempfile::tempdir().unwrap();
    let good = write(dir.path(), "good.json", GOOD);
    let out = svc.cli(&["request", "--wait", &good]);
    let text = stdout(&out);
    assert!(text.contains("ACTIVE"), "{text}");
    assert!(text.contains("cam -> pi-"));
}

#[test]
fn reconfigure_federate_consent_delegate() {
    let svc = Service::start();
    let dir = tempfile::tempdir().unwrap();
    let exporter = write(dir.path(), "a.json", GOOD);
    let importer = write(dir.path(), "b.json", &GOOD.replace("\"po\"", "\"pm\""));
    let a = stdout(&svc.cli(&["request", &exporter])).trim().to_string();
    let b = stdout(&svc.cli(&["request", &importer])).trim().to_string();

    let delta = write(
        dir.path(),
        "delta.json",
        r#"{"add_vfs": [{"name": "store", "kind": "VAF", "demand": {"cpu_millicores": 100}}]}"#,
    );
    let out = svc.cli_as("po", &["reconfigure", &a, &delta]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("store -> "));

    let bad_delta = write(
        dir.path(),
        "bad_delta.json",
        r#"{"add_vfs": [], "colour": 1}"#,
    );
    assert_eq!(
        svc.cli_as("po", &["reconfigure", &a, &bad_delta])
            .status
            .code(),
        Some(1)
    );

    let rules = write(
        dir.path(),
        "rules.json",
        r#"{"rules": [{"direction": "OUTBOUND", "stream": "frames", "transform": {"kind": "REDACT", "fields": ["operator"]}}]}"#,
    );
    let out = svc.cli_as("po", &["federate", &a, &b, &rules]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let link = stdout(&out).split_whitespace().next().unwrap().to_string();
    assert!(stdout(&svc.cli_as("po", &["consent", &link])).contains("Proposed"));
    assert!(stdout(&svc.cli_as("pm", &["consent", &link])).contains("Active"));

    let unknown_stream = write(
        dir.path(),
        "rules2.json",
        r#"{"rules": [{"direction": "OUTBOUND", "stream": "nope", "transform": {"kind": "PASS"}}]}"#,
    );
    let out = svc.cli_as("po", &["federate", &a, &b, &unknown_stream]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stderr(&out).contains("/rules/0/stream"), "{}", stderr(&out));

    let grant = write(
        dir.path(),
        "grant.json",
        &format!(
            r#"{{"grantor": "po", "grantee": "pm", "scope": {{"slices": ["{a}"]}}, "actions": ["RECONFIGURE"], "expiry": 1000}}"#
        ),
    );
    let out = svc.cli_as("po", &["delegate", &grant]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(
        stdout(&svc.cli_as("pm", &["terminate", &a])).trim(),
        "TERMINATED"
    );
    assert!(stdout(&svc.cli(&["events"])).contains("CLOSED"));
}

#[test]
fn scenario_subcommand_reports_checks() {
    let svc = Service::start();
    let out = svc.cli(&["scenario", "maintenance"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.lines().any(|l| l.starts_with("PASS merge_ordered")));
    assert!(!text.contains("FAIL"));
    assert_eq!(svc.cli(&["scenario", "unknown"]).status.code(), Some(1));
}
