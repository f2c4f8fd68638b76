//! Injects each supported API-usage defect into `w1` and shows what the
//! validator reports for it.

use hapitrace::codegen::TracingMode;
use hapitrace::mock::{trace_workload, Injection, RunOptions, WorkloadSpec};
use hapitrace::pipeline::{run_pipeline, SinkOutput};
use hapitrace::sinks::ValidatorSink;
use hapitrace::trace::TraceReader;

pub fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = WorkloadSpec::resolve("w1")?;
    let tmp = tempfile::tempdir()?;
    let cases = std::iter::once(None).chain(Injection::ALL.into_iter().map(Some));
    for (i, inject) in cases.enumerate() {
        let dir = tmp.path().join(format!("case{i}"));
        let options = RunOptions {
            injections: inject.into_iter().collect(),
            ..RunOptions::default()
        };
        let (summary, _) = trace_workload(&spec, &dir, TracingMode::Default, &options)?;
        let reader = TraceReader::open(&dir)?;
        // No model passed: the validator uses the one embedded in the trace.
        let mut validator = ValidatorSink::new(None);
        let report = run_pipeline(&reader, &mut [&mut validator])?;
        let Some(SinkOutput::Findings(findings)) = report.output("validate") else {
            unreachable!()
        };
        let label = inject.map(|j| j.as_str()).unwrap_or("clean");
        println!(
            "{label}: {} failed calls, {} finding(s)",
            summary.failures.len(),
            findings.len()
        );
        for f in findings {
            println!("  {f}");
        }
    }
    Ok(())
}
