//! Runs the bundled `w1` workload against the mock runtime under tracing and
//! prints the run summary and the tally, as `hapitrace trace -- w1` does.

use hapitrace::aggregate::tally_trace;
use hapitrace::codegen::TracingMode;
use hapitrace::mock::{trace_workload, RunOptions, WorkloadSpec};

pub fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tmp = tempfile::tempdir()?;
    let dir = tmp.path().join("w1");
    let spec = WorkloadSpec::resolve("w1")?;
    let (summary, streams) = trace_workload(&spec, &dir, TracingMode::Default, &RunOptions::default())?;

    println!(
        "{}: {} calls over {} ns of virtual time, {} failures",
        summary.workload,
        summary.total_calls(),
        summary.virtual_duration_ns,
        summary.failures.len()
    );
    for s in &streams {
        println!(
            "  stream {}: {} events, {} filtered",
            s.id(),
            s.event_count,
            s.filtered_count
        );
    }
    println!();
    print!("{}", tally_trace(&dir)?.render());
    Ok(())
}
