//! A user-defined sink plugged into the analysis pipeline next to the
//! built-in tally: it measures how busy each device engine was.

use std::collections::BTreeMap;

use hapitrace::codegen::TracingMode;
use hapitrace::mock::{trace_workload, RunOptions, WorkloadSpec};
use hapitrace::pipeline::{run_pipeline, Message, Sink, SinkError, SinkOutput, SpanKind};
use hapitrace::sinks::{format_duration, TallySink};
use hapitrace::trace::TraceReader;

#[derive(Default)]
struct EngineBusy {
    busy: BTreeMap<String, u64>,
    first: u64,
    last: u64,
}

impl Sink for EngineBusy {
    fn name(&self) -> &str {
        "engine-busy"
    }

    fn on_message(&mut self, msg: &Message) -> Result<(), SinkError> {
        if let Message::Span(s) = msg {
            if s.kind == SpanKind::DeviceCommand {
                let engine = s.entry("engine").and_then(|v| v.as_str()).unwrap_or("?");
                let tile = s.entry("tile").and_then(|v| v.as_u64()).unwrap_or(0);
                *self.busy.entry(format!("tile{tile}/{engine}")).or_default() += s.duration_ns();
                if self.first == 0 || s.start_ns < self.first {
                    self.first = s.start_ns;
                }
                self.last = self.last.max(s.end_ns);
            }
        }
        Ok(())
    }

    fn on_finish(&mut self) -> Result<SinkOutput, SinkError> {
        let window = (self.last - self.first).max(1) as f64;
        let map = self
            .busy
            .iter()
            .map(|(k, v)| (k.clone(), serde_json::json!(*v as f64 / window)))
            .collect();
        Ok(SinkOutput::Json(serde_json::Value::Object(map)))
    }
}

pub fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tmp = tempfile::tempdir()?;
    let dir = tmp.path().join("w2");
    trace_workload(
        &WorkloadSpec::resolve("w2")?,
        &dir,
        TracingMode::Default,
        &RunOptions::default(),
    )?;

    let reader = TraceReader::open(&dir)?;
    let mut busy = EngineBusy::default();
    let mut tally = TallySink::new();
    let report = run_pipeline(&reader, &mut [&mut busy, &mut tally])?;

    if let Some(SinkOutput::Json(v)) = report.output("engine-busy") {
        for (engine, share) in v.as_object().into_iter().flatten() {
            println!("{engine:<16} {:>6.2}%", share.as_f64().unwrap_or(0.0) * 100.0);
        }
    }
    if let Some(SinkOutput::Tally(t)) = report.output("tally") {
        for r in &t.device {
            println!(
                "{:<12} {:>10} over {} commands",
                r.name,
                format_duration(r.time_ns),
                r.count
            );
        }
    }
    println!("filter: {:?}", report.stats.filter);
    Ok(())
}
