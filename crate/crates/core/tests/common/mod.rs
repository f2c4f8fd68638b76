//! Generators and independent oracles shared by the integration suites.
#![allow(dead_code)]

use std::collections::BTreeMap;

use hapitrace::api_model::mock_model;
use hapitrace::codegen::{build_schema_registry, EventSchema, FieldKind, Scenario, SchemaRegistry};
use hapitrace::pipeline::{Span, SpanKind};
use hapitrace::sinks::TallyReport;
use hapitrace::trace::{encode_record, EventRecord, StreamId, Value};
use rand::seq::SliceRandom;
use rand::Rng;

pub fn mock_registry() -> SchemaRegistry {
    build_schema_registry(&mock_model(), Scenario::Hybrid).unwrap()
}

pub fn zero(kind: FieldKind) -> Value {
    match kind {
        FieldKind::U64 => Value::U64(0),
        FieldKind::I64 => Value::I64(0),
        FieldKind::F64 => Value::F64(0.0),
        FieldKind::Address => Value::Address(0),
        FieldKind::String => Value::String(String::new()),
        FieldKind::Blob => Value::Blob(Vec::new()),
    }
}

pub fn zero_payload(schema: &EventSchema) -> Vec<Value> {
    schema.fields.iter().map(|f| zero(f.kind)).collect()
}

pub fn random_value<R: Rng>(rng: &mut R, kind: FieldKind) -> Value {
    match kind {
        FieldKind::U64 => Value::U64(rng.gen()),
        FieldKind::I64 => Value::I64(rng.gen()),
        FieldKind::F64 => Value::F64(f64::from_bits(rng.gen())),
        FieldKind::Address => Value::Address(rng.gen()),
        FieldKind::String => {
            let n = rng.gen_range(0..24);
            Value::String((0..n).map(|_| rng.gen_range(' '..='~')).collect())
        }
        FieldKind::Blob => {
            let n = rng.gen_range(0..40);
            Value::Blob((0..n).map(|_| rng.gen()).collect())
        }
    }
}

/// Host functions of the mock model that have both an entry and an exit schema.
pub fn host_functions(reg: &SchemaRegistry) -> Vec<(String, u32, u32)> {
    let mut out = Vec::new();
    for s in reg.schemas() {
        if let Some(f) = s.name.strip_prefix("ze:").and_then(|n| n.strip_suffix("_entry")) {
            if let Some(exit) = reg.exit_of(f) {
                out.push((f.to_string(), s.id, exit.id));
            }
        }
    }
    out
}

/// Expected host span, independent of the library's span type.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct OracleSpan {
    pub tid: u64,
    pub name: String,
    pub start: u64,
    pub end: u64,
    pub depth: u32,
    pub result: i64,
}

/// A random well-nested call sequence on one thread, at most `max_depth`
/// deep, with strictly increasing timestamps and the spans a stack
/// simulation derives from it.
pub fn nested_calls<R: Rng>(
    rng: &mut R,
    reg: &SchemaRegistry,
    fns: &[(String, u32, u32)],
    tid: u64,
    calls: usize,
    max_depth: usize,
) -> (Vec<EventRecord>, Vec<OracleSpan>) {
    let mut records = Vec::new();
    let mut t = rng.gen_range(0..1000u64);
    let mut stack: Vec<(usize, u64, i64)> = Vec::new();
    let mut opened = 0;
    let mut spans = Vec::new();
    while opened < calls || !stack.is_empty() {
        let open = opened < calls && stack.len() < max_depth && (stack.is_empty() || rng.gen_bool(0.5));
        t += rng.gen_range(1..50);
        if open {
            let i = rng.gen_range(0..fns.len());
            let result = if rng.gen_bool(0.1) { 0x7800_0003 } else { 0 };
            let schema = reg.get(fns[i].1).unwrap();
            records.push(EventRecord::new(schema.id, t, zero_payload(schema)));
            stack.push((i, t, result));
            opened += 1;
        } else {
            let (i, start, result) = stack.pop().unwrap();
            let schema = reg.get(fns[i].2).unwrap();
            let mut payload = zero_payload(schema);
            if let Some(k) = schema.field_index("result") {
                payload[k] = Value::I64(result);
            }
            records.push(EventRecord::new(schema.id, t, payload));
            spans.push(OracleSpan {
                tid,
                name: fns[i].0.clone(),
                start,
                end: t,
                depth: stack.len() as u32,
                result,
            });
        }
    }
    (records, spans)
}

pub fn to_oracle(s: &Span) -> OracleSpan {
    OracleSpan {
        tid: s.stream.tid,
        name: s.name.clone(),
        start: s.start_ns,
        end: s.end_ns,
        depth: s.depth,
        result: s.result,
    }
}

/// Stable sort of all records by (timestamp, stream), stream order first.
pub fn mux_oracle(streams: &[(StreamId, Vec<EventRecord>)]) -> Vec<(StreamId, EventRecord)> {
    let mut all: Vec<(StreamId, EventRecord)> = streams
        .iter()
        .flat_map(|(id, recs)| recs.iter().map(move |r| (id.clone(), r.clone())))
        .collect();
    all.sort_by(|a, b| (a.1.timestamp_ns, &a.0).cmp(&(b.1.timestamp_ns, &b.0)));
    all
}

pub fn serialize(events: &[(StreamId, EventRecord)]) -> Vec<u8> {
    let mut out = Vec::new();
    for (id, rec) in events {
        out.extend_from_slice(id.to_string().as_bytes());
        out.push(0);
        encode_record(rec, &mut out);
    }
    out
}

/// Random spans over a small name and thread space.
pub fn random_spans<R: Rng>(rng: &mut R, n: usize) -> Vec<Span> {
    let hosts = ["node0", "node1"];
    let names = [
        "zeMockInit",
        "zeMockMemAlloc",
        "zeMockEventHostSynchronize",
        "hipMemcpy",
    ];
    let device = ["memcpy_h2d", "conv2d", "saxpy"];
    (0..n)
        .map(|_| {
            let kind = if rng.gen_bool(0.3) {
                SpanKind::DeviceCommand
            } else {
                SpanKind::HostApi
            };
            let name = match kind {
                SpanKind::HostApi => names.choose(rng).unwrap(),
                SpanKind::DeviceCommand => device.choose(rng).unwrap(),
            };
            let start = rng.gen_range(0..1_000_000_000u64);
            let dur = rng.gen_range(0..10_000_000u64);
            let pid = rng.gen_range(1000..1003);
            Span {
                name: name.to_string(),
                kind,
                stream: StreamId::new(*hosts.choose(rng).unwrap(), pid, pid + rng.gen_range(0..3)),
                start_ns: start,
                end_ns: start + dur,
                entry_payload: Vec::new(),
                exit_payload: Vec::new(),
                result: if rng.gen_bool(0.2) { 1 } else { 0 },
                truncated: false,
                depth: 0,
            }
        })
        .collect()
}

/// Per (kind, name): (total, count, min, max, errors), folded naively.
pub type Fold = BTreeMap<(bool, String), (u64, u64, u64, u64, u64)>;

pub fn fold_oracle(spans: &[Span]) -> Fold {
    let mut m: Fold = BTreeMap::new();
    for s in spans {
        let d = s.end_ns - s.start_ns;
        let e = m
            .entry((s.kind == SpanKind::DeviceCommand, s.name.clone()))
            .or_insert((0, 0, u64::MAX, 0, 0));
        e.0 += d;
        e.1 += 1;
        e.2 = e.2.min(d);
        e.3 = e.3.max(d);
        e.4 += (s.result != 0) as u64;
    }
    m
}

pub fn fold_of_report(r: &TallyReport) -> Fold {
    let mut m = BTreeMap::new();
    for (device, rows) in [(false, &r.host), (true, &r.device)] {
        for row in rows {
            m.insert(
                (device, row.name.clone()),
                (row.time_ns, row.count, row.min_ns, row.max_ns, row.error_count),
            );
        }
    }
    m
}

/// A report over random spans; `fingerprint` stands in for the registry.
pub fn random_report<R: Rng>(rng: &mut R, fingerprint: u64) -> TallyReport {
    let n = rng.gen_range(0..30);
    let spans = random_spans(rng, n);
    let mut r = TallyReport::from_spans(&spans);
    if n > 0 {
        r.fingerprint = Some(fingerprint);
        r.backends
            .insert(if rng.gen_bool(0.5) { "BACKEND_ZE" } else { "BACKEND_HIP" }.into());
        if rng.gen_bool(0.2) {
            r.dropped
                .insert(format!("node0/{}/1", rng.gen_range(0..3)), rng.gen_range(1..100));
        }
    }
    r
}

pub fn merged(a: &TallyReport, b: &TallyReport) -> TallyReport {
    let mut x = a.clone();
    x.merge(b).unwrap();
    x
}
