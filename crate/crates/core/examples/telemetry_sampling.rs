//! Samples device power, frequency and engine utilization while `w3` runs,
//! then summarizes each counter from the trace.

use std::collections::BTreeMap;

use hapitrace::codegen::TracingMode;
use hapitrace::mock::{trace_workload, RunOptions, WorkloadSpec};
use hapitrace::pipeline::{run_pipeline, Message, Sink, SinkError};
use hapitrace::trace::TraceReader;

#[derive(Default)]
struct Counters(BTreeMap<&'static str, (u64, f64, f64)>);

impl Sink for Counters {
    fn name(&self) -> &str {
        "counters"
    }

    fn on_message(&mut self, msg: &Message) -> Result<(), SinkError> {
        if let Message::Sample(s) = msg {
            let e = self.0.entry(s.counter.label()).or_insert((0, 0.0, f64::MIN));
            e.0 += 1;
            e.1 += s.value;
            e.2 = e.2.max(s.value);
        }
        Ok(())
    }
}

pub fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tmp = tempfile::tempdir()?;
    let dir = tmp.path().join("w3");
    let options = RunOptions {
        sample_period_ns: Some(100_000),
        ..RunOptions::default()
    };
    let (summary, streams) = trace_workload(&WorkloadSpec::resolve("w3")?, &dir, TracingMode::Default, &options)?;
    println!("{} samples across {} streams", summary.samples, streams.len());

    let reader = TraceReader::open(&dir)?;
    let mut counters = Counters::default();
    run_pipeline(&reader, &mut [&mut counters])?;
    println!("{:<36} {:>6} {:>10} {:>10}", "counter", "n", "mean", "max");
    for (label, (n, sum, max)) in &counters.0 {
        println!("{label:<36} {n:>6} {:>10.2} {max:>10.2}", sum / *n as f64);
    }
    Ok(())
}
