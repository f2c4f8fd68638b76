//! Analysis pipeline: per-stream sources, a timestamp muxer, the interval
//! filter and any number of sinks, driven in a single pull-based pass.
//!
//! ```text
//! stream_*.bin ─┐
//! stream_*.bin ─┼─ mux_streams ─ build_intervals ─┬─ sink
//! stream_*.bin ─┘                                 └─ sink
//! ```
//!
//! Every sink sees the same message sequence: raw events in global time
//! order, each derived [`Span`] or [`TelemetrySample`] right after the event
//! it came from, [`Diagnostic`]s in place of rejected events, truncated spans
//! for calls still open at the end, then one [`Message::EndOfStream`].

mod interval;
mod mux;

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use interval::{build_intervals, IntervalFilter, Intervals};
pub use mux::{mux_streams, Mux, Source};

use crate::api_model::ApiModel;
use crate::codegen::SchemaRegistry;
use crate::sampler::Counter;
use crate::sinks::{TallyReport, ValidationFinding};
use crate::trace::{EventRecord, StreamId, StreamInfo, TraceError, TraceReader, Value};

/// A raw event tagged with the stream it was read from.
#[derive(Debug, Clone, PartialEq)]
pub struct TracedEvent {
    pub stream: Arc<StreamId>,
    pub record: EventRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanKind {
    HostApi,
    DeviceCommand,
}

/// A timed interval: one API call on a host thread, or one device command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub name: String,
    pub kind: SpanKind,
    pub stream: StreamId,
    pub start_ns: u64,
    pub end_ns: u64,
    /// Entry fields for host spans; the profiling fields for device spans.
    pub entry_payload: Vec<(String, Value)>,
    pub exit_payload: Vec<(String, Value)>,
    pub result: i64,
    /// The call never returned within the trace.
    pub truncated: bool,
    /// Number of enclosing open calls on the same thread.
    pub depth: u32,
}

impl Span {
    pub fn duration_ns(&self) -> u64 {
        self.end_ns - self.start_ns
    }

    pub fn entry(&self, field: &str) -> Option<&Value> {
        self.entry_payload.iter().find(|(n, _)| n == field).map(|(_, v)| v)
    }

    pub fn exit(&self, field: &str) -> Option<&Value> {
        self.exit_payload.iter().find(|(n, _)| n == field).map(|(_, v)| v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetrySample {
    pub counter: Counter,
    pub stream: StreamId,
    pub device: u64,
    pub timestamp_ns: u64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    OrphanExit,
}

/// A problem found while deriving spans; the offending event is not forwarded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    pub stream: StreamId,
    pub timestamp_ns: u64,
    pub subject: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Event(TracedEvent),
    Span(Span),
    Sample(TelemetrySample),
    Diagnostic(Diagnostic),
    EndOfStream,
}

/// Interval filter accounting.
///
/// Every input event is exactly one of passed (forwarded as is), converted
/// (forwarded and turned into a span or sample) or a diagnostic (dropped).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterStats {
    pub events_in: u64,
    pub events_passed: u64,
    pub events_converted: u64,
    pub diagnostics: u64,
    pub spans: u64,
    pub samples: u64,
    pub truncated: u64,
}

impl FilterStats {
    pub fn is_conserved(&self) -> bool {
        self.events_in == self.events_passed + self.events_converted + self.diagnostics
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineStats {
    /// Events the muxer produced.
    pub events_read: u64,
    /// Messages delivered to each sink.
    pub messages: u64,
    pub filter: FilterStats,
}

#[derive(Debug, thiserror::Error)]
pub enum SinkError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("stream {stream}: record {index} at {timestamp_ns} ns precedes the previous record at {previous_ns} ns")]
    Ordering {
        stream: String,
        index: u64,
        previous_ns: u64,
        timestamp_ns: u64,
    },
    #[error("event refers to unknown schema id {0}")]
    UnknownSchema(u32),
    #[error("sink `{sink}` failed: {source}")]
    Sink {
        sink: String,
        #[source]
        source: SinkError,
        /// Diagnostics raised before the failure.
        diagnostics: Vec<Diagnostic>,
    },
}

/// What [`Sink::on_start`] gets to know about the trace.
#[derive(Debug, Clone, Copy)]
pub struct StartContext<'a> {
    pub registry: &'a SchemaRegistry,
    pub streams: &'a [StreamInfo],
    /// The API model, when the trace embeds one.
    pub model: Option<&'a ApiModel>,
}

/// Result of a finished sink.
#[derive(Debug, Clone, PartialEq)]
pub enum SinkOutput {
    None,
    Text(String),
    Tally(TallyReport),
    Timeline { path: Option<PathBuf>, objects: usize },
    Findings(Vec<ValidationFinding>),
    Json(serde_json::Value),
}

/// Analysis plugin. The driver calls `on_start` once, `on_message` for every
/// message in order (ending with [`Message::EndOfStream`]), then `on_finish`.
pub trait Sink {
    fn name(&self) -> &str;

    fn on_start(&mut self, _ctx: &StartContext<'_>) -> Result<(), SinkError> {
        Ok(())
    }

    fn on_message(&mut self, msg: &Message) -> Result<(), SinkError>;

    fn on_finish(&mut self) -> Result<SinkOutput, SinkError> {
        Ok(SinkOutput::None)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineReport {
    pub stats: PipelineStats,
    /// `(sink name, output)` in sink order.
    pub outputs: Vec<(String, SinkOutput)>,
    pub diagnostics: Vec<Diagnostic>,
}

impl PipelineReport {
    pub fn output(&self, sink: &str) -> Option<&SinkOutput> {
        self.outputs.iter().find(|(n, _)| n == sink).map(|(_, o)| o)
    }
}

/// Runs `sinks` over every stream of a finalized trace.
pub fn run_pipeline(reader: &TraceReader, sinks: &mut [&mut dyn Sink]) -> Result<PipelineReport, PipelineError> {
    let sources = reader.cursors()?.into_iter().map(Source::from).collect();
    let ctx = StartContext {
        registry: reader.registry(),
        streams: reader.streams(),
        model: reader.metadata().model.as_ref(),
    };
    run_sources(&ctx, reader.registry().clone(), sources, sinks)
}

/// Runs `sinks` over arbitrary sources that share `registry`.
pub fn run_sources(
    ctx: &StartContext<'_>,
    registry: Arc<SchemaRegistry>,
    sources: Vec<Source>,
    sinks: &mut [&mut dyn Sink],
) -> Result<PipelineReport, PipelineError> {
    let sink_err = |sink: &dyn Sink, source, diagnostics: &[Diagnostic]| PipelineError::Sink {
        sink: sink.name().to_string(),
        source,
        diagnostics: diagnostics.to_vec(),
    };
    let mut diagnostics = Vec::new();
    for s in sinks.iter_mut() {
        s.on_start(ctx).map_err(|e| sink_err(&**s, e, &diagnostics))?;
    }
    let mut stream = build_intervals(mux_streams(sources), registry);
    let mut messages = 0;
    for msg in stream.by_ref() {
        let msg = msg?;
        messages += 1;
        if let Message::Diagnostic(d) = &msg {
            diagnostics.push(d.clone());
        }
        for s in sinks.iter_mut() {
            s.on_message(&msg).map_err(|e| sink_err(&**s, e, &diagnostics))?;
        }
    }
    let filter = stream.stats().clone();
    let mut outputs = Vec::with_capacity(sinks.len());
    for s in sinks.iter_mut() {
        let out = s.on_finish().map_err(|e| sink_err(&**s, e, &diagnostics))?;
        outputs.push((s.name().to_string(), out));
    }
    Ok(PipelineReport {
        stats: PipelineStats {
            events_read: filter.events_in,
            messages,
            filter,
        },
        outputs,
        diagnostics,
    })
}
