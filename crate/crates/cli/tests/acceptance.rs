//! One PASS/FAIL line per acceptance criterion. Runs the service in-process
//! and drives the bench and scenarios through the `slicefab` binary.

mod common;

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{stderr, stdout, write, Service};
use slicefab_core::bench::{read_csv, BenchSample, RATIO_POINT, RATIO_RANGE};
use slicefab_core::oracle::{
    conservation_fuzz, exhaustive_feasible, isolation_fuzz, random_instance, validate_plan,
};
use slicefab_core::orchestrator::place;

const ANCHOR_S: f64 = 8.4;
const ANCHOR_TOL: f64 = 0.05;

struct Gate {
    failed: usize,
}

impl Gate {
    fn report(&mut self, name: &str, ok: bool, detail: String) {
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        self.failed += usize::from(!ok);
    }
}

fn bench(
    svc: &Service,
    dir: &Path,
    tag: &str,
    extra: &[&str],
) -> Result<(Vec<BenchSample>, String, Duration), String> {
    let csv = dir.join(format!("{tag}.csv"));
    let events = dir.join(format!("{tag}.ndjson"));
    let mut args = vec![
        "bench",
        "fig6",
        "--csv",
        csv.to_str().unwrap(),
        "--events",
        events.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    let start = Instant::now();
    let out = svc.cli(&args);
    let took = start.elapsed();
    if out.status.code() != Some(0) {
        return Err(format!(
            "exit {:?}: {}",
            out.status.code(),
            stderr(&out).trim()
        ));
    }
    let text = std::fs::read_to_string(&csv).map_err(|e| e.to_string())?;
    let samples = read_csv(&text).map_err(|e| e.to_string())?;
    let log = std::fs::read_to_string(&events).map_err(|e| e.to_string())?;
    Ok((samples, text + &log, took))
}

fn show(v: Option<f64>) -> String {
    v.map_or_else(|| "missing".into(), |v| format!("{v:.3}"))
}

fn at(samples: &[BenchSample], running: u32) -> Option<f64> {
    samples
        .iter()
        .find(|s| s.running_after == running)
        .map(|s| s.response_time_s)
}

fn placement_oracle() -> (bool, String) {
    let start = Instant::now();
    let n = 500u64;
    let (mut agree, mut invalid, mut unsound) = (0u64, 0u64, 0u64);
    for seed in 0..n {
        let inst = random_instance(seed);
        let heuristic = place(&inst.blueprint, &inst.inventory, &inst.view);
        let exhaustive = exhaustive_feasible(&inst.blueprint, &inst.inventory, &inst.view);
        if let Ok(plan) = &heuristic {
            invalid += u64::from(
                validate_plan(&inst.blueprint, &inst.inventory, &inst.view, plan).is_err(),
            );
            unsound += u64::from(!exhaustive);
        }
        agree += u64::from(heuristic.is_ok() == exhaustive);
    }
    let rate = agree as f64 / n as f64;
    let took = start.elapsed();
    let ok = invalid == 0 && unsound == 0 && rate >= 0.9 && took < Duration::from_secs(60);
    (
        ok,
        format!(
            "{n} instances, {invalid} invalid plans, agreement {rate:.3} (>= 0.90), {:.2} s (< 60 s)",
            took.as_secs_f64()
        ),
    )
}

const LIFECYCLE_BP: &str = r#"{"id": "det", "tenant": "po",
  "vfs": [{"name": "a", "kind": "VNF", "demand": {"cpu_millicores": 300}},
          {"name": "b", "kind": "VAF", "demand": {"cpu_millicores": 200}, "mode": "EMPTY"}],
  "vlinks": [{"endpoint_a": "a", "endpoint_b": "b", "bandwidth_mbps": 10, "max_latency_ms": 8}]}"#;

/// Event log of a fresh service after a fixed request sequence.
fn service_run(dir: &Path) -> String {
    let svc = Service::start();
    let bp = write(dir, "det.json", LIFECYCLE_BP);
    let delta = write(dir, "det-delta.json", r#"{"remove_vfs": ["b"]}"#);
    let mut ids = Vec::new();
    for _ in 0..3 {
        ids.push(stdout(&svc.cli(&["request", &bp])).trim().to_string());
    }
    svc.cli_as("po", &["reconfigure", &ids[0], &delta]);
    svc.cli_as("po", &["terminate", &ids[1]]);
    stdout(&svc.cli(&["events"]))
}

fn main() -> ExitCode {
    let svc = Service::start();
    let dir = tempfile::tempdir().unwrap();
    let mut gate = Gate { failed: 0 };

    let vf = bench(&svc, dir.path(), "vf", &["--mode", "vf"]);
    let empty = bench(&svc, dir.path(), "empty", &["--mode", "empty"]);

    match &vf {
        Ok((s, _, took)) => {
            let v = at(s, RATIO_POINT);
            let ok = v.is_some_and(|v| (v - ANCHOR_S).abs() <= ANCHOR_TOL * ANCHOR_S)
                && *took < Duration::from_secs(5);
            gate.report(
                "fig6_anchor",
                ok,
                format!(
                    "WITH_VF at running_after={RATIO_POINT}: {} s (target {ANCHOR_S} +/- 5%), wall {:.3} s (< 5 s)",
                    show(v),
                    took.as_secs_f64()
                ),
            );
        }
        Err(e) => gate.report("fig6_anchor", false, e.clone()),
    }

    match (&vf, &empty) {
        (Ok((a, ..)), Ok((b, ..))) => {
            let ratio = at(a, RATIO_POINT)
                .zip(at(b, RATIO_POINT))
                .map(|(x, y)| x / y);
            let ok = ratio.is_some_and(|r| (RATIO_RANGE.0..=RATIO_RANGE.1).contains(&r));
            gate.report(
                "fig6_ratio",
                ok,
                format!(
                    "WITH_VF/EMPTY = {} (range [{}, {}])",
                    show(ratio),
                    RATIO_RANGE.0,
                    RATIO_RANGE.1
                ),
            );
        }
        _ => gate.report("fig6_ratio", false, "bench failed".into()),
    }

    match &vf {
        Ok((s, ..)) => {
            let strict = s.len() > 1
                && s.windows(2)
                    .all(|w| w[1].response_time_s > w[0].response_time_s);
            let series: Vec<String> = s
                .iter()
                .map(|x| format!("{:.2}", x.response_time_s))
                .collect();
            gate.report(
                "fig6_trend",
                strict,
                format!(
                    "{} rounds strictly increasing: [{}]",
                    s.len(),
                    series.join(", ")
                ),
            );
        }
        Err(e) => gate.report("fig6_trend", false, e.clone()),
    }

    let (ok, detail) = placement_oracle();
    gate.report("placement_oracle", ok, detail);

    let c = conservation_fuzz(1000, 7);
    gate.report(
        "conservation_fuzz",
        c.violations.is_empty(),
        format!(
            "{} sequences, {} operations ({} admitted, {} reconfigured, {} terminated), {} violations",
            c.sequences,
            c.operations,
            c.admitted,
            c.reconfigured,
            c.terminated,
            c.violations.len()
        ),
    );

    let iso = isolation_fuzz(10_000, 11);
    gate.report(
        "isolation_fuzz",
        iso.unauthorized == 0 && iso.local_only_exported == 0,
        format!(
            "{} records, {} delivered, {} without an ACTIVE rule, {} LOCAL_ONLY exported",
            iso.records, iso.delivered, iso.unauthorized, iso.local_only_exported
        ),
    );

    let mut details = Vec::new();
    let mut all = true;
    for name in ["monitoring", "maintenance", "sfaas"] {
        let start = Instant::now();
        let out = svc.cli(&["scenario", name]);
        let took = start.elapsed();
        let ok = out.status.code() == Some(0) && took < Duration::from_secs(10);
        all &= ok;
        details.push(format!(
            "{name} {} in {:.2} s",
            if ok { "ok" } else { "failed" },
            took.as_secs_f64()
        ));
        if !ok {
            eprint!("{}{}", stdout(&out), stderr(&out));
        }
    }
    gate.report("scenario_suite", all, details.join(", "));

    let seeded = ["--mode", "vf", "--seed", "2024", "--noise", "0.3"];
    let runs = (
        bench(&svc, dir.path(), "det1", &seeded),
        bench(&svc, dir.path(), "det2", &seeded),
    );
    let svc_a = service_run(dir.path());
    let svc_b = service_run(dir.path());
    match runs {
        (Ok((_, a, _)), Ok((_, b, _))) => gate.report(
            "determinism",
            a == b && svc_a == svc_b && !svc_a.is_empty(),
            format!(
                "bench CSV+event log {} bytes identical: {}; service event log {} bytes identical: {}",
                a.len(),
                a == b,
                svc_a.len(),
                svc_a == svc_b
            ),
        ),
        _ => gate.report("determinism", false, "bench failed".into()),
    }

    println!("{} of 8 criteria passed", 8 - gate.failed);
    if gate.failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
