use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::{json, Value as Json};

use crate::pipeline::{Message, Sink, SinkError, SinkOutput, Span, SpanKind, TelemetrySample};

/// Device tracks get tids from here up: `DEVICE_TID_BASE + 100 * device + 10 * tile + engine`.
pub const DEVICE_TID_BASE: u64 = 1 << 32;

/// Keys every timeline object carries.
pub const REQUIRED_KEYS: [&str; 5] = ["name", "ph", "ts", "pid", "tid"];

fn us(ns: u64) -> f64 {
    ns as f64 / 1000.0
}

fn device_track(span: &Span) -> (u64, String) {
    let u = |n: &str| span.entry(n).and_then(|v| v.as_u64()).unwrap_or(0);
    let engine = span.entry("engine").and_then(|v| v.as_str()).unwrap_or("");
    let engine_idx = match engine {
        "compute" => 0,
        "copy" => 1,
        _ => 9,
    };
    let (device, tile) = (u("device"), u("tile"));
    (
        DEVICE_TID_BASE + 100 * device + 10 * tile + engine_idx,
        format!("GPU {device} tile {tile} {engine}"),
    )
}

/// Complete event for a span: host spans on their thread, device spans on a device track.
pub fn span_object(span: &Span) -> Json {
    let (tid, cat) = match span.kind {
        SpanKind::HostApi => (span.stream.tid, "host"),
        SpanKind::DeviceCommand => (device_track(span).0, "device"),
    };
    let mut args = serde_json::Map::new();
    if span.kind == SpanKind::HostApi {
        args.insert("result".into(), json!(span.result));
    }
    if span.truncated {
        args.insert("truncated".into(), json!(true));
    }
    json!({
        "name": span.name,
        "cat": cat,
        "ph": "X",
        "ts": us(span.start_ns),
        "dur": us(span.duration_ns()),
        "pid": span.stream.pid,
        "tid": tid,
        "args": args,
    })
}

/// Counter event; the counter label is the track name.
pub fn sample_object(s: &TelemetrySample) -> Json {
    json!({
        "name": s.counter.label(),
        "ph": "C",
        "ts": us(s.timestamp_ns),
        "pid": s.stream.pid,
        "tid": s.stream.tid,
        "args": { "value": s.value },
    })
}

/// Checks the key requirements of one timeline object.
pub fn check_object(obj: &Json) -> Result<(), String> {
    let map = obj.as_object().ok_or("not an object")?;
    for k in REQUIRED_KEYS {
        if !map.contains_key(k) {
            return Err(format!("missing key `{k}`"));
        }
    }
    match map["ph"].as_str() {
        Some("X") if !map.get("dur").is_some_and(Json::is_number) => Err("complete event without `dur`".into()),
        Some("C") if !map.get("args").is_some_and(Json::is_object) => Err("counter event without `args`".into()),
        Some("X" | "C" | "M") => Ok(()),
        other => Err(format!("unexpected ph {other:?}")),
    }
}

/// Writes a Chrome trace-event JSON array, one object per span and sample.
pub struct TimelineSink {
    path: PathBuf,
    out: Option<BufWriter<File>>,
    objects: usize,
    /// Device track names, emitted as thread-name metadata at the end.
    tracks: BTreeMap<(u64, u64), String>,
}

impl TimelineSink {
    pub fn new(path: impl AsRef<Path>) -> Self {
        TimelineSink {
            path: path.as_ref().to_path_buf(),
            out: None,
            objects: 0,
            tracks: BTreeMap::new(),
        }
    }

    fn io(&self, source: std::io::Error) -> SinkError {
        SinkError::Io {
            path: self.path.clone(),
            source,
        }
    }

    fn write(&mut self, obj: &Json) -> Result<(), SinkError> {
        let first = self.objects == 0;
        self.objects += 1;
        let out = self.out.as_mut().expect("opened in on_start");
        let r = if first {
            out.write_all(b"\n")
        } else {
            out.write_all(b",\n")
        }
        .and_then(|_| serde_json::to_writer(&mut *out, obj).map_err(std::io::Error::from));
        r.map_err(|e| self.io(e))
    }
}

impl Sink for TimelineSink {
    fn name(&self) -> &str {
        "timeline"
    }

    fn on_start(&mut self, _ctx: &crate::pipeline::StartContext<'_>) -> Result<(), SinkError> {
        let file = File::create(&self.path).map_err(|e| self.io(e))?;
        let mut out = BufWriter::new(file);
        out.write_all(b"[").map_err(|e| self.io(e))?;
        self.out = Some(out);
        Ok(())
    }

    fn on_message(&mut self, msg: &Message) -> Result<(), SinkError> {
        match msg {
            Message::Span(s) => {
                if s.kind == SpanKind::DeviceCommand {
                    let (tid, name) = device_track(s);
                    self.tracks.entry((s.stream.pid, tid)).or_insert(name);
                }
                self.write(&span_object(s))
            }
            Message::Sample(s) => self.write(&sample_object(s)),
            _ => Ok(()),
        }
    }

    fn on_finish(&mut self) -> Result<SinkOutput, SinkError> {
        for ((pid, tid), name) in std::mem::take(&mut self.tracks) {
            let meta = json!({
                "name": "thread_name",
                "ph": "M",
                "ts": 0,
                "pid": pid,
                "tid": tid,
                "args": { "name": name },
            });
            self.write(&meta)?;
        }
        let mut out = self.out.take().expect("opened in on_start");
        out.write_all(b"\n]\n")
            .and_then(|_| out.flush())
            .map_err(|e| self.io(e))?;
        Ok(SinkOutput::Timeline {
            path: Some(self.path.clone()),
            objects: self.objects,
        })
    }
}
