use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use super::{Diagnostic, DiagnosticKind, FilterStats, Message, PipelineError, Span, SpanKind, TelemetrySample};
use crate::codegen::{EventClass, EventSchema, FieldOrigin, SchemaRegistry};
use crate::sampler::Counter;
use crate::trace::{StreamId, Value};

struct Frame {
    function: String,
    start_ns: u64,
    entry: Vec<(String, Value)>,
}

#[derive(Default)]
struct ThreadState {
    stack: Vec<Frame>,
    last_ns: u64,
}

/// Pairs entry/exit events into host spans and converts profiling and
/// telemetry events into device spans and samples.
///
/// Every event except orphan exits is forwarded unchanged; derived messages
/// follow the event they come from.
pub struct IntervalFilter {
    registry: Arc<SchemaRegistry>,
    threads: HashMap<Arc<StreamId>, ThreadState>,
    /// Threads in first-seen order, so end-of-stream output is deterministic.
    order: Vec<Arc<StreamId>>,
    stats: FilterStats,
}

fn fields(schema: &EventSchema, payload: &[Value]) -> Vec<(String, Value)> {
    schema
        .fields
        .iter()
        .zip(payload)
        .map(|(f, v)| (f.name.clone(), v.clone()))
        .collect()
}

fn field<'a>(schema: &EventSchema, payload: &'a [Value], name: &str) -> Option<&'a Value> {
    schema.field_index(name).and_then(|i| payload.get(i))
}

impl IntervalFilter {
    pub fn new(registry: Arc<SchemaRegistry>) -> Self {
        IntervalFilter {
            registry,
            threads: HashMap::new(),
            order: Vec::new(),
            stats: FilterStats::default(),
        }
    }

    pub fn stats(&self) -> &FilterStats {
        &self.stats
    }

    fn thread(&mut self, id: &Arc<StreamId>) -> &mut ThreadState {
        if !self.threads.contains_key(id) {
            self.order.push(id.clone());
        }
        self.threads.entry(id.clone()).or_default()
    }

    /// Feeds one message, appending the resulting messages to `out`.
    pub fn process(&mut self, msg: Message, out: &mut VecDeque<Message>) -> Result<(), PipelineError> {
        let ev = match msg {
            Message::Event(ev) => ev,
            Message::EndOfStream => {
                self.finish(out);
                out.push_back(Message::EndOfStream);
                return Ok(());
            }
            other => {
                out.push_back(other);
                return Ok(());
            }
        };
        self.stats.events_in += 1;
        let registry = self.registry.clone();
        let schema = registry
            .get(ev.record.schema_id)
            .ok_or(PipelineError::UnknownSchema(ev.record.schema_id))?;
        let ts = ev.record.timestamp_ns;
        let t = self.thread(&ev.stream);
        t.last_ns = t.last_ns.max(ts);
        match schema.class {
            EventClass::HostEntry => {
                let function = schema.function().unwrap_or_default().to_string();
                t.stack.push(Frame {
                    function,
                    start_ns: ts,
                    entry: fields(schema, &ev.record.payload),
                });
                self.stats.events_passed += 1;
                out.push_back(Message::Event(ev));
            }
            EventClass::HostExit => {
                let function = schema.function().unwrap_or_default();
                if t.stack.last().is_some_and(|f| f.function == function) {
                    let frame = t.stack.pop().expect("checked");
                    let result = schema
                        .fields
                        .iter()
                        .position(|f| f.origin == FieldOrigin::Result)
                        .and_then(|i| ev.record.payload[i].as_i64())
                        .unwrap_or(0);
                    let span = Span {
                        name: frame.function,
                        kind: SpanKind::HostApi,
                        stream: (*ev.stream).clone(),
                        start_ns: frame.start_ns,
                        end_ns: ts,
                        entry_payload: frame.entry,
                        exit_payload: fields(schema, &ev.record.payload),
                        result,
                        truncated: false,
                        depth: t.stack.len() as u32,
                    };
                    self.stats.events_converted += 1;
                    self.stats.spans += 1;
                    out.push_back(Message::Event(ev));
                    out.push_back(Message::Span(span));
                } else {
                    self.stats.diagnostics += 1;
                    out.push_back(Message::Diagnostic(Diagnostic {
                        kind: DiagnosticKind::OrphanExit,
                        stream: (*ev.stream).clone(),
                        timestamp_ns: ts,
                        subject: function.to_string(),
                        message: format!("exit of `{function}` without a matching entry"),
                    }));
                }
            }
            EventClass::DeviceProfiling => {
                let p = &ev.record.payload;
                let u = |n: &str| field(schema, p, n).and_then(Value::as_u64).unwrap_or(0);
                let s = |n: &str| field(schema, p, n).and_then(Value::as_str).unwrap_or("").to_string();
                let start = u("device_start_ns");
                let span = Span {
                    name: s("command_name"),
                    kind: SpanKind::DeviceCommand,
                    stream: (*ev.stream).clone(),
                    start_ns: start,
                    end_ns: u("device_end_ns").max(start),
                    entry_payload: fields(schema, p),
                    exit_payload: Vec::new(),
                    result: 0,
                    truncated: false,
                    depth: 0,
                };
                self.stats.events_converted += 1;
                self.stats.spans += 1;
                out.push_back(Message::Event(ev));
                out.push_back(Message::Span(span));
            }
            EventClass::TelemetrySample => {
                let counter = Counter::from_schema_name(&schema.name);
                let sample = counter.map(|counter| TelemetrySample {
                    counter,
                    stream: (*ev.stream).clone(),
                    timestamp_ns: ts,
                    device: field(schema, &ev.record.payload, "device")
                        .and_then(Value::as_u64)
                        .unwrap_or(0),
                    value: field(schema, &ev.record.payload, "value")
                        .and_then(Value::as_f64)
                        .unwrap_or(0.0),
                });
                match sample {
                    Some(sample) => {
                        self.stats.events_converted += 1;
                        self.stats.samples += 1;
                        out.push_back(Message::Event(ev));
                        out.push_back(Message::Sample(sample));
                    }
                    None => {
                        self.stats.events_passed += 1;
                        out.push_back(Message::Event(ev));
                    }
                }
            }
            EventClass::Meta => {
                self.stats.events_passed += 1;
                out.push_back(Message::Event(ev));
            }
        }
        Ok(())
    }

    /// Closes every open frame as a truncated span ending at its thread's last timestamp.
    fn finish(&mut self, out: &mut VecDeque<Message>) {
        for id in &self.order {
            let t = self.threads.get_mut(id).expect("registered thread");
            while let Some(frame) = t.stack.pop() {
                self.stats.spans += 1;
                self.stats.truncated += 1;
                out.push_back(Message::Span(Span {
                    name: frame.function,
                    kind: SpanKind::HostApi,
                    stream: (**id).clone(),
                    start_ns: frame.start_ns,
                    end_ns: t.last_ns.max(frame.start_ns),
                    entry_payload: frame.entry,
                    exit_payload: Vec::new(),
                    result: 0,
                    truncated: true,
                    depth: t.stack.len() as u32,
                }));
            }
        }
    }
}

/// Iterator adapter running an [`IntervalFilter`] over muxed messages.
pub struct Intervals<I> {
    input: I,
    filter: IntervalFilter,
    queue: VecDeque<Message>,
    failed: bool,
}

pub fn build_intervals<I>(input: I, registry: Arc<SchemaRegistry>) -> Intervals<I>
where
    I: Iterator<Item = Result<Message, PipelineError>>,
{
    Intervals {
        input,
        filter: IntervalFilter::new(registry),
        queue: VecDeque::new(),
        failed: false,
    }
}

impl<I> Intervals<I> {
    pub fn stats(&self) -> &FilterStats {
        self.filter.stats()
    }
}

impl<I> Iterator for Intervals<I>
where
    I: Iterator<Item = Result<Message, PipelineError>>,
{
    type Item = Result<Message, PipelineError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(m) = self.queue.pop_front() {
                return Some(Ok(m));
            }
            if self.failed {
                return None;
            }
            match self.input.next()? {
                Ok(m) => {
                    if let Err(e) = self.filter.process(m, &mut self.queue) {
                        self.failed = true;
                        return Some(Err(e));
                    }
                }
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e));
                }
            }
        }
    }
}
