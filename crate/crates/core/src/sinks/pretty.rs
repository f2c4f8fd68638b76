use std::fmt::Write as _;
use std::io::Write;

use crate::codegen::{EventSchema, SchemaRegistry};
use crate::pipeline::{Message, Sink, SinkError, SinkOutput, StartContext};
use crate::trace::{StreamId, Value};

/// `HH:MM:SS.nnnnnnnnn` for a nanosecond timestamp; hours are not wrapped.
pub fn format_timestamp(ns: u64) -> String {
    let secs = ns / 1_000_000_000;
    format!(
        "{:02}:{:02}:{:02}.{:09}",
        secs / 3600,
        (secs / 60) % 60,
        secs % 60,
        ns % 1_000_000_000
    )
}

/// One pretty-print line (without the trailing newline).
pub fn pretty_line(schema: &EventSchema, stream: &StreamId, timestamp_ns: u64, payload: &[Value]) -> String {
    let mut s = String::with_capacity(96 + 24 * payload.len());
    let _ = write!(
        s,
        "{} - {} - vpid: {}, vtid: {} - {}: {{ ",
        format_timestamp(timestamp_ns),
        stream.hostname,
        stream.pid,
        stream.tid,
        schema.name
    );
    for (i, (f, v)) in schema.fields.iter().zip(payload).enumerate() {
        if i > 0 {
            s.push_str(", ");
        }
        let _ = write!(s, "{}: {}", f.name, v);
    }
    s.push_str(" }");
    s
}

enum Target {
    Buffer(String),
    Writer(Box<dyn Write>),
}

/// Text dump of every raw event, one line each.
pub struct PrettySink {
    registry: Option<SchemaRegistry>,
    target: Target,
    lines: u64,
}

impl PrettySink {
    /// Collects the text and returns it as [`SinkOutput::Text`].
    pub fn buffered() -> Self {
        PrettySink {
            registry: None,
            target: Target::Buffer(String::new()),
            lines: 0,
        }
    }

    /// Streams lines into `w`; the output is [`SinkOutput::None`].
    pub fn to_writer(w: impl Write + 'static) -> Self {
        PrettySink {
            registry: None,
            target: Target::Writer(Box::new(w)),
            lines: 0,
        }
    }

    pub fn lines(&self) -> u64 {
        self.lines
    }
}

impl Sink for PrettySink {
    fn name(&self) -> &str {
        "pretty"
    }

    fn on_start(&mut self, ctx: &StartContext<'_>) -> Result<(), SinkError> {
        self.registry = Some(ctx.registry.clone());
        Ok(())
    }

    fn on_message(&mut self, msg: &Message) -> Result<(), SinkError> {
        let Message::Event(ev) = msg else { return Ok(()) };
        let Some(schema) = self.registry.as_ref().and_then(|r| r.get(ev.record.schema_id)) else {
            return Err(SinkError::Other(format!("unknown schema id {}", ev.record.schema_id)));
        };
        let line = pretty_line(schema, &ev.stream, ev.record.timestamp_ns, &ev.record.payload);
        self.lines += 1;
        match &mut self.target {
            Target::Buffer(b) => {
                b.push_str(&line);
                b.push('\n');
            }
            Target::Writer(w) => writeln!(w, "{line}").map_err(|source| SinkError::Io {
                path: "<pretty output>".into(),
                source,
            })?,
        }
        Ok(())
    }

    fn on_finish(&mut self) -> Result<SinkOutput, SinkError> {
        match &mut self.target {
            Target::Buffer(b) => Ok(SinkOutput::Text(std::mem::take(b))),
            Target::Writer(w) => {
                w.flush().map_err(|source| SinkError::Io {
                    path: "<pretty output>".into(),
                    source,
                })?;
                Ok(SinkOutput::None)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timestamps() {
        assert_eq!(format_timestamp(0), "00:00:00.000000000");
        assert_eq!(format_timestamp(78_086_240_059_291), "21:41:26.240059291");
        assert_eq!(format_timestamp(360_000_000_000_000), "100:00:00.000000000");
    }
}
