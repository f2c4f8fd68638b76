mod common;

use std::path::Path;

use common::*;
use hapitrace::codegen::{FieldKind, TracingMode};
use hapitrace::mock::{trace_workload, RunOptions, WorkloadSpec};
use hapitrace::pipeline::{run_pipeline, Span, SpanKind};
use hapitrace::sampler::Counter;
use hapitrace::sinks::{
    check_object, format_duration, format_timestamp, pretty_line, PrettySink, Section, TallyReport, TimelineSink,
};
use hapitrace::trace::{StreamId, TraceReader, Value};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn traced(dir: &Path, workload: &str, o: &RunOptions) {
    trace_workload(&WorkloadSpec::resolve(workload).unwrap(), dir, TracingMode::Default, o).unwrap();
}

#[test]
fn first_memcpy_entry_matches_the_golden_line() {
    let tmp = tempfile::tempdir().unwrap();
    let o = RunOptions {
        hostname: Some("x4204c0s1b0n0".into()),
        ..RunOptions::default()
    };
    traced(tmp.path(), "w1", &o);
    let mut pretty = PrettySink::buffered();
    let report = run_pipeline(&TraceReader::open(tmp.path()).unwrap(), &mut [&mut pretty]).unwrap();
    let Some(hapitrace::pipeline::SinkOutput::Text(text)) = report.output("pretty") else {
        panic!()
    };
    let line = text
        .lines()
        .find(|l| l.contains("ze:zeMockCommandListAppendMemoryCopy_entry"))
        .unwrap();
    let golden = include_str!("golden/memcpy_entry.txt");
    assert_eq!(line, golden.trim_end());
}

#[test]
fn timestamps_render_as_clock_time() {
    assert_eq!(format_timestamp(0), "00:00:00.000000000");
    assert_eq!(format_timestamp(3_723_000_000_042), "01:02:03.000000042");
    assert_eq!(format_timestamp(100 * 3600 * 1_000_000_000), "100:00:00.000000000");
}

/// Parses one pretty line back into its parts, using the schema's field kinds.
struct Parsed {
    timestamp: String,
    host: String,
    pid: u64,
    tid: u64,
    name: String,
    values: Vec<Value>,
}

fn parse_line(line: &str, kinds: &[(String, FieldKind)]) -> Result<Parsed, String> {
    let (timestamp, rest) = line.split_once(" - ").ok_or("no timestamp")?;
    let (host, rest) = rest.split_once(" - vpid: ").ok_or("no host")?;
    let (pid, rest) = rest.split_once(", vtid: ").ok_or("no pid")?;
    let (tid, rest) = rest.split_once(" - ").ok_or("no tid")?;
    let (name, mut rest) = rest.split_once(": { ").ok_or("no name")?;
    let mut values = Vec::new();
    for (i, (field, kind)) in kinds.iter().enumerate() {
        if i > 0 {
            rest = rest.strip_prefix(", ").ok_or("no separator")?;
        }
        rest = rest
            .strip_prefix(field.as_str())
            .and_then(|r| r.strip_prefix(": "))
            .ok_or_else(|| format!("no field {field}"))?;
        let (v, r) = parse_value(rest, *kind)?;
        values.push(v);
        rest = r;
    }
    if rest != " }" {
        return Err(format!("trailing {rest:?}"));
    }
    Ok(Parsed {
        timestamp: timestamp.into(),
        host: host.into(),
        pid: pid.parse().map_err(|_| "pid")?,
        tid: tid.parse().map_err(|_| "tid")?,
        name: name.into(),
        values,
    })
}

fn scalar(s: &str) -> (&str, &str) {
    let end = s.find([',', ' ']).unwrap_or(s.len());
    s.split_at(end)
}

fn parse_value(s: &str, kind: FieldKind) -> Result<(Value, &str), String> {
    let bad = |_| format!("bad {kind:?} in {s:?}");
    Ok(match kind {
        FieldKind::U64 => {
            let (a, r) = scalar(s);
            (Value::U64(a.parse().map_err(|_| bad(()))?), r)
        }
        FieldKind::I64 => {
            let (a, r) = scalar(s);
            (Value::I64(a.parse().map_err(|_| bad(()))?), r)
        }
        FieldKind::F64 => {
            let (a, r) = scalar(s);
            (Value::F64(a.parse().map_err(|_| bad(()))?), r)
        }
        FieldKind::Address => {
            let (a, r) = scalar(s);
            let hex = a.strip_prefix("0x").filter(|h| h.len() == 16).ok_or_else(|| bad(()))?;
            (Value::Address(u64::from_str_radix(hex, 16).map_err(|_| bad(()))?), r)
        }
        FieldKind::String => {
            let mut de = serde_json::Deserializer::from_str(s).into_iter::<String>();
            let v = de.next().ok_or_else(|| bad(()))?.map_err(|_| bad(()))?;
            (Value::String(v), &s[de.byte_offset()..])
        }
        FieldKind::Blob => {
            let body = s.strip_prefix("[ ").ok_or_else(|| bad(()))?;
            let end = body.find(" ]").ok_or_else(|| bad(()))?;
            let bytes = body[..end]
                .split(", ")
                .filter(|b| !b.is_empty())
                .map(|b| b.parse::<u8>())
                .collect::<Result<_, _>>()
                .map_err(|_| bad(()))?;
            (Value::Blob(bytes), &body[end + 2..])
        }
    })
}

fn same(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::F64(x), Value::F64(y)) => x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()),
        _ => a == b,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn pretty_lines_parse_back(seed in any::<u64>(), ts in any::<u64>(), pid in any::<u32>(), tid in any::<u32>()) {
        let reg = mock_registry();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for schema in reg.schemas() {
            let payload: Vec<Value> = schema.fields.iter().map(|f| random_value(&mut rng, f.kind)).collect();
            let stream = StreamId::new("node-7", pid as u64, tid as u64);
            let line = pretty_line(schema, &stream, ts, &payload);
            let kinds: Vec<(String, FieldKind)> = schema.fields.iter().map(|f| (f.name.clone(), f.kind)).collect();
            let p = parse_line(&line, &kinds).map_err(|e| TestCaseError::fail(format!("{e}: {line}")))?;
            prop_assert_eq!(p.timestamp, format_timestamp(ts));
            prop_assert_eq!(p.host, "node-7");
            prop_assert_eq!((p.pid, p.tid), (pid as u64, tid as u64));
            prop_assert_eq!(&p.name, &schema.name);
            prop_assert_eq!(p.values.len(), payload.len());
            for (a, b) in p.values.iter().zip(&payload) {
                prop_assert!(same(a, b), "{:?} != {:?} in {}", a, b, line);
            }
        }
    }

    #[test]
    fn tally_equals_the_naive_fold(seed in any::<u64>(), n in 0usize..400) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spans = random_spans(&mut rng, n);
        let report = TallyReport::from_spans(&spans);
        prop_assert_eq!(fold_of_report(&report), fold_oracle(&spans));
        let threads: std::collections::BTreeSet<_> =
            spans.iter().map(|s| (s.stream.hostname.clone(), s.stream.pid, s.stream.tid)).collect();
        prop_assert_eq!(&report.threads, &threads);
        for section in [Section::Host, Section::Device] {
            let rows = report.rows(section);
            prop_assert!(rows.windows(2).all(|w| w[0].time_ns >= w[1].time_ns));
            if !rows.is_empty() {
                let pct: f64 = rows.iter().map(|r| report.percent(section, r)).sum();
                prop_assert!((pct - 100.0).abs() < 1e-6);
            }
        }
    }
}

fn host_span(name: &str, start_ns: u64, dur: u64) -> Span {
    Span {
        name: name.into(),
        kind: SpanKind::HostApi,
        stream: StreamId::new("h", 1, 1),
        start_ns,
        end_ns: start_ns + dur,
        entry_payload: Vec::new(),
        exit_payload: Vec::new(),
        result: 0,
        truncated: false,
        depth: 0,
    }
}

fn row_line<'a>(text: &'a str, name: &str) -> Vec<&'a str> {
    text.lines()
        .find(|l| l.trim_start().starts_with(&format!("{name} |")))
        .unwrap()
        .split('|')
        .map(str::trim)
        .collect()
}

#[test]
fn tally_rows_render_time_and_share() {
    let spans = [
        host_span("f", 0, 4_730_000_000),
        host_span("g", 5_000_000_000, 4_679_000_000),
        host_span("h", 10_000_000_000, 3_241_000_000),
    ];
    let text = TallyReport::from_spans(&spans).render();
    assert_eq!(&row_line(&text, "f")[..3], ["f", "4.73s", "37.39"]);
    assert_eq!(&row_line(&text, "g")[..3], ["g", "4.68s", "36.99"]);

    let one = TallyReport::from_spans(&[host_span("tiny", 7, 1)]).render();
    assert_eq!(
        row_line(&one, "tiny"),
        ["tiny", "1.00ns", "100.00", "1", "1.00ns", "1.00ns", "1.00ns"]
    );
}

#[test]
fn durations_pick_the_largest_unit() {
    assert_eq!(format_duration(0), "0.00ns");
    assert_eq!(format_duration(999), "999.00ns");
    assert_eq!(format_duration(1_000), "1.00us");
    assert_eq!(format_duration(500_910_000), "500.91ms");
    assert_eq!(format_duration(394_500_000), "394.50ms");
    assert_eq!(format_duration(4_730_000_000), "4.73s");
}

#[test]
fn timeline_objects_carry_required_keys_and_counter_tracks() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("t");
    let o = RunOptions {
        sample_period_ns: Some(1_000_000),
        ..RunOptions::default()
    };
    traced(&dir, "w3", &o);
    let path = tmp.path().join("timeline.json");
    let mut timeline = TimelineSink::new(&path);
    run_pipeline(&TraceReader::open(&dir).unwrap(), &mut [&mut timeline]).unwrap();
    let objects: Vec<serde_json::Value> = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    let mut counters = std::collections::BTreeSet::new();
    let (mut host, mut device) = (0, 0);
    for obj in &objects {
        check_object(obj).unwrap();
        match obj["ph"].as_str().unwrap() {
            "C" => {
                counters.insert(obj["name"].as_str().unwrap().to_string());
            }
            "X" if obj["cat"] == "device" => device += 1,
            "X" => host += 1,
            _ => {}
        }
    }
    assert!(host > 0 && device > 0);
    let expected: std::collections::BTreeSet<String> = [
        "Power|Domain 0",
        "Power|Domain 1",
        "Power|Domain 2",
        "GPU Frequency|Domain 0",
        "GPU Frequency|Domain 1",
        "Compute Engine|Tile 0",
        "Compute Engine|Tile 1",
        "Copy Engine|Tile 0",
        "Copy Engine|Tile 1",
    ]
    .into_iter()
    .map(String::from)
    .collect();
    assert_eq!(counters, expected);
    assert_eq!(Counter::ALL.map(|c| c.label()).len(), 9);
}

#[test]
fn check_object_rejects_incomplete_objects() {
    use serde_json::json;
    assert!(check_object(&json!({"name": "a", "ph": "X", "ts": 1, "pid": 1, "tid": 1, "dur": 2})).is_ok());
    assert!(check_object(&json!({"name": "a", "ph": "X", "ts": 1, "pid": 1, "tid": 1})).is_err());
    assert!(check_object(&json!({"ph": "C", "ts": 1, "pid": 1, "tid": 1, "args": {}})).is_err());
    assert!(check_object(&json!([1])).is_err());
}
