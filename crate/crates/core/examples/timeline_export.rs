//! Traces the four-thread `w2` workload and exports a Chrome trace-event
//! timeline (open it in Perfetto or chrome://tracing).
//!
//! Pass a path to keep the file: `cargo run --example timeline_export -- w2.json`.

use hapitrace::codegen::TracingMode;
use hapitrace::mock::{trace_workload, RunOptions, WorkloadSpec};
use hapitrace::pipeline::{run_pipeline, SinkOutput};
use hapitrace::sinks::{check_object, TimelineSink};
use hapitrace::trace::TraceReader;

pub fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tmp = tempfile::tempdir()?;
    let dir = tmp.path().join("w2");
    let out = std::env::args()
        .nth(1)
        .filter(|a| a.ends_with(".json"))
        .map(Into::into)
        .unwrap_or_else(|| tmp.path().join("w2.json"));

    let spec = WorkloadSpec::resolve("w2")?;
    trace_workload(&spec, &dir, TracingMode::Default, &RunOptions::default())?;

    let reader = TraceReader::open(&dir)?;
    let mut sink = TimelineSink::new(&out);
    let report = run_pipeline(&reader, &mut [&mut sink])?;
    if let Some(SinkOutput::Timeline { objects, .. }) = report.output("timeline") {
        println!("{objects} objects from {} events", report.stats.events_read);
    }

    let objects: Vec<serde_json::Value> = serde_json::from_slice(&std::fs::read(&out)?)?;
    for o in &objects {
        check_object(o)?;
    }
    let tracks: std::collections::BTreeSet<u64> = objects.iter().filter_map(|o| o["tid"].as_u64()).collect();
    println!("{} tracks:", tracks.len());
    for o in objects.iter().filter(|o| o["ph"] == "M") {
        println!("  {} = {}", o["tid"], o["args"]["name"]);
    }
    println!(
        "host threads: {:?}",
        tracks.iter().filter(|t| **t < 1 << 32).collect::<Vec<_>>()
    );
    Ok(())
}
