use std::collections::BTreeSet;
use std::path::Path;

use hapitrace::codegen::TracingMode;
use hapitrace::mock::{trace_workload, RunOptions, WorkloadSpec};
use hapitrace::trace::TraceReader;

/// Every event of a trace as `(stream, schema name, timestamp, rendered payload)`.
fn events(dir: &Path) -> BTreeSet<(String, String, u64, String)> {
    let reader = TraceReader::open(dir).unwrap();
    let reg = reader.registry().clone();
    let mut out = BTreeSet::new();
    for (i, info) in reader.streams().iter().enumerate() {
        for r in reader.read_stream(i).unwrap() {
            let name = reg.get(r.schema_id).unwrap().name.clone();
            out.insert((info.id().to_string(), name, r.timestamp_ns, format!("{:?}", r.payload)));
        }
    }
    out
}

fn traced(tmp: &Path, workload: &str, mode: TracingMode) -> BTreeSet<(String, String, u64, String)> {
    let dir = tmp.join(format!("{workload}-{mode:?}"));
    let o = RunOptions {
        hostname: Some("node0".into()),
        ..RunOptions::default()
    };
    trace_workload(&WorkloadSpec::resolve(workload).unwrap(), &dir, mode, &o).unwrap();
    events(&dir)
}

#[test]
fn modes_nest() {
    let tmp = tempfile::tempdir().unwrap();
    for w in ["w1", "w3"] {
        let min = traced(tmp.path(), w, TracingMode::Minimal);
        let def = traced(tmp.path(), w, TracingMode::Default);
        let full = traced(tmp.path(), w, TracingMode::Full);
        assert!(!min.is_empty());
        assert!(min.is_subset(&def), "{w}: minimal not within default");
        assert!(def.is_subset(&full), "{w}: default not within full");
        assert!(min.len() < def.len() && def.len() < full.len(), "{w}");
    }
}

#[test]
fn polling_calls_are_full_only() {
    let tmp = tempfile::tempdir().unwrap();
    let poll = |set: &BTreeSet<(String, String, u64, String)>| {
        set.iter()
            .filter(|e| e.1.starts_with("ze:zeMockEventHostSynchronize"))
            .count()
    };
    assert_eq!(poll(&traced(tmp.path(), "w3", TracingMode::Minimal)), 0);
    assert_eq!(poll(&traced(tmp.path(), "w3", TracingMode::Default)), 0);
    assert!(poll(&traced(tmp.path(), "w3", TracingMode::Full)) > 0);
}

#[test]
fn mode_masks_nest_in_the_registry() {
    let reg = hapitrace::codegen::build_schema_registry(
        &hapitrace::api_model::mock_model(),
        hapitrace::codegen::Scenario::Hybrid,
    )
    .unwrap();
    for s in reg.schemas() {
        if s.mode_mask.contains(TracingMode::Minimal) {
            assert!(s.mode_mask.contains(TracingMode::Default), "{}", s.name);
        }
        if s.mode_mask.contains(TracingMode::Default) {
            assert!(s.mode_mask.contains(TracingMode::Full), "{}", s.name);
        }
    }
    let n = |m| reg.enabled_names(m).len();
    assert_eq!(
        (n(TracingMode::Minimal), n(TracingMode::Default), n(TracingMode::Full)),
        (12, 36, 38)
    );
}
