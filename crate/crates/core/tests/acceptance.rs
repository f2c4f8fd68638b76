//! Acceptance suite: one line per criterion, nonzero exit if any fails.

mod common;

use std::collections::BTreeSet;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::{mpsc, Arc};
use std::time::{Duration, Instant};

use common::*;
use hapitrace::aggregate::{merge_hierarchical, merge_tallies};
use hapitrace::cli::{run_bench, BenchConfig};
use hapitrace::codegen::{FieldKind, TracingMode};
use hapitrace::mock::{trace_workload, Injection, RunOptions, WorkloadSpec};
use hapitrace::pipeline::{
    build_intervals, mux_streams, run_pipeline, Message, Sink, SinkError, SinkOutput, Source, Span, SpanKind,
    TelemetrySample,
};
use hapitrace::sampler::Counter;
use hapitrace::sinks::{check_object, PrettySink, Rule, TallyReport, TimelineSink, ValidatorSink};
use hapitrace::trace::{
    decode_record, encode_record, open_trace_writer, DrainPolicy, EmitOutcome, EventRecord, StreamId, TraceReader,
    Value, WriterConfig,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn tempdir() -> tempfile::TempDir {
    tempfile::tempdir().expect("temp dir")
}

fn value_of(kind: FieldKind) -> BoxedStrategy<Value> {
    match kind {
        FieldKind::U64 => any::<u64>().prop_map(Value::U64).boxed(),
        FieldKind::I64 => any::<i64>().prop_map(Value::I64).boxed(),
        FieldKind::F64 => any::<u64>().prop_map(|b| Value::F64(f64::from_bits(b))).boxed(),
        FieldKind::Address => any::<u64>().prop_map(Value::Address).boxed(),
        FieldKind::String => ".{0,40}".prop_map(Value::String).boxed(),
        FieldKind::Blob => prop::collection::vec(any::<u8>(), 0..64).prop_map(Value::Blob).boxed(),
    }
}

fn codec_round_trip() -> Outcome {
    let reg = mock_registry();
    let n = reg.schemas().len();
    let schemas = reg.schemas().to_vec();
    let strategy = (0..n, any::<u64>()).prop_flat_map(move |(i, ts)| {
        let s = &schemas[i];
        let id = s.id;
        let fields: Vec<_> = s.fields.iter().map(|f| value_of(f.kind)).collect();
        fields.prop_map(move |p| EventRecord::new(id, ts, p))
    });
    let cases = 10_000;
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&strategy, |rec| {
            let mut bytes = Vec::new();
            encode_record(&rec, &mut bytes);
            let (back, used) = decode_record(&reg, &bytes).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(used, bytes.len());
            prop_assert_eq!(back, rec);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("{cases} cases, 0 failures"))
}

fn mux_oracle_match() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6d7578);
    let streams: Vec<(StreamId, Vec<EventRecord>)> = (0..8u64)
        .map(|k| {
            let mut t = 0u64;
            let recs = (0..100_000u32)
                .map(|i| {
                    t += rng.gen_range(0..4);
                    EventRecord::new(i % 5, t, vec![])
                })
                .collect();
            (StreamId::new("h", 1, (k * 3) % 8), recs)
        })
        .collect();
    let sources = streams
        .iter()
        .map(|(id, r)| Source::from_records(id.clone(), r.clone()))
        .collect();
    let mut got = Vec::with_capacity(800_000);
    for m in mux_streams(sources) {
        if let Message::Event(e) = m.map_err(|e| e.to_string())? {
            got.push(((*e.stream).clone(), e.record));
        }
    }
    let a = serialize(&got);
    let b = serialize(&mux_oracle(&streams));
    ensure!(a == b, "serialized outputs differ ({} vs {} bytes)", a.len(), b.len());
    Ok(format!("{} events, {} bytes identical", got.len(), a.len()))
}

fn interval_oracle_match() -> Outcome {
    let reg = Arc::new(mock_registry());
    let fns = host_functions(&reg);
    let mut rng = ChaCha8Rng::seed_from_u64(0x696e74);
    let mut spans = 0;
    for seq in 0..10_000 {
        let calls = rng.gen_range(1..30);
        let (recs, mut expected) = nested_calls(&mut rng, &reg, &fns, 1, calls, 8);
        let sources = vec![Source::from_records(StreamId::new("h", 1, 1), recs)];
        let mut got = Vec::new();
        for m in build_intervals(mux_streams(sources), Arc::clone(&reg)) {
            if let Message::Span(s) = m.map_err(|e| e.to_string())? {
                got.push(to_oracle(&s));
            }
        }
        got.sort();
        expected.sort();
        ensure!(got == expected, "sequence {seq}: span multisets differ");
        spans += got.len();
    }
    Ok(format!("10000 sequences, {spans} spans"))
}

fn tally_and_monoid() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x74616c);
    for i in 0..1_000 {
        let n = rng.gen_range(0..200);
        let spans = random_spans(&mut rng, n);
        ensure!(
            fold_of_report(&TallyReport::from_spans(&spans)) == fold_oracle(&spans),
            "fold mismatch on set {i}"
        );
        let (a, b, c) = (
            random_report(&mut rng, 7),
            random_report(&mut rng, 7),
            random_report(&mut rng, 7),
        );
        ensure!(merged(&a, &TallyReport::default()) == a, "right identity fails on {i}");
        ensure!(merged(&TallyReport::default(), &a) == a, "left identity fails on {i}");
        ensure!(merged(&a, &b) == merged(&b, &a), "commutativity fails on {i}");
        ensure!(
            merged(&merged(&a, &b), &c) == merged(&a, &merged(&b, &c)),
            "associativity fails on {i}"
        );
    }
    let ranks: Vec<TallyReport> = (0..8).map(|_| random_report(&mut rng, 7)).collect();
    let h = merge_hierarchical(&ranks, 4).map_err(|e| e.to_string())?;
    ensure!(
        h == merge_tallies(&ranks).map_err(|e| e.to_string())?,
        "hierarchical(8, 4) != flat"
    );
    Ok("1000 fold sets, 1000 pairs/triples, hierarchical = flat".into())
}

fn findings(dir: &Path, workload: &str, inject: &[Injection]) -> Result<Vec<Rule>, String> {
    let spec = WorkloadSpec::resolve(workload).map_err(|e| e.to_string())?;
    let o = RunOptions {
        injections: inject.to_vec(),
        ..RunOptions::default()
    };
    trace_workload(&spec, dir, TracingMode::Full, &o).map_err(|e| e.to_string())?;
    let reader = TraceReader::open(dir).map_err(|e| e.to_string())?;
    let mut v = ValidatorSink::new(None);
    let report = run_pipeline(&reader, &mut [&mut v]).map_err(|e| e.to_string())?;
    match report.output("validate") {
        Some(SinkOutput::Findings(f)) => Ok(f.iter().map(|f| f.rule).collect()),
        o => Err(format!("unexpected validator output {o:?}")),
    }
}

fn validator_exact() -> Outcome {
    let tmp = tempdir();
    for w in ["w1", "w2"] {
        let f = findings(&tmp.path().join(w), w, &[])?;
        ensure!(f.is_empty(), "clean {w} reports {f:?}");
    }
    for (inj, rule) in [
        (Injection::UninitPnext, Rule::UninitPnext),
        (Injection::LeakEvent, Rule::LeakedEvent),
        (Injection::NoResetCmdlist, Rule::CmdlistNotReset),
    ] {
        let f = findings(&tmp.path().join(format!("{inj:?}")), "w1", &[inj])?;
        ensure!(f == [rule], "{inj:?} yields {f:?}");
    }
    Ok("3 injections found exactly, clean w1/w2 silent".into())
}

fn drop_semantics() -> Outcome {
    let tmp = tempdir();
    let reg = mock_registry();
    let init = reg.entry_of("zeMockInit").ok_or("no zeMockInit")?.clone();
    let manual = |cap| WriterConfig {
        buffer_capacity: cap,
        drain: DrainPolicy::Manual,
        ..WriterConfig::default()
    };
    let w = open_trace_writer(tmp.path().join("a"), reg.clone(), manual(2)).map_err(|e| e.to_string())?;
    let s = w.acquire_stream(StreamId::new("h", 1, 1)).map_err(|e| e.to_string())?;
    let attempted = 10u64;
    let mut written = 0;
    for t in 0..attempted {
        written += (s.emit(init.id, t, zero_payload(&init)).map_err(|e| e.to_string())? == EmitOutcome::Written) as u64;
    }
    let info = w.finalize().map_err(|e| e.to_string())?.remove(0);
    ensure!(written == 2, "{written} written with capacity 2");
    ensure!(
        info.dropped_count == attempted - written && info.event_count == written,
        "dropped {} written {}",
        info.dropped_count,
        info.event_count
    );

    let w = open_trace_writer(tmp.path().join("b"), reg, manual(16)).map_err(|e| e.to_string())?;
    let (tx, rx) = mpsc::channel();
    let worst = std::thread::scope(|sc| {
        sc.spawn(|| {
            let s = w.thread_stream().unwrap();
            let mut worst = Duration::ZERO;
            for t in 0..20_000 {
                let t0 = Instant::now();
                let _ = s.emit(init.id, t, zero_payload(&init));
                worst = worst.max(t0.elapsed());
            }
            let _ = tx.send(worst);
        });
        rx.recv_timeout(Duration::from_millis(100))
    });
    let worst = worst.map_err(|_| "emitters blocked past the 100 ms watchdog".to_string())?;
    w.finalize().map_err(|e| e.to_string())?;
    Ok(format!(
        "dropped = attempted - written = {}; worst emit {worst:?} with drainer stalled",
        attempted - written
    ))
}

fn event_names(dir: &Path) -> Result<BTreeSet<String>, String> {
    let reader = TraceReader::open(dir).map_err(|e| e.to_string())?;
    let reg = reader.registry().clone();
    let mut names = BTreeSet::new();
    for i in 0..reader.streams().len() {
        for r in reader.read_stream(i).map_err(|e| e.to_string())? {
            names.insert(reg.get(r.schema_id).ok_or("unknown schema")?.name.clone());
        }
    }
    Ok(names)
}

fn mode_filtering() -> Outcome {
    let tmp = tempdir();
    let poll = "ze:zeMockEventHostSynchronize_entry";
    let mut sizes = Vec::new();
    for w in ["w1", "w3"] {
        let spec = WorkloadSpec::resolve(w).map_err(|e| e.to_string())?;
        let mut sets = Vec::new();
        for mode in [TracingMode::Minimal, TracingMode::Default, TracingMode::Full] {
            let dir = tmp.path().join(format!("{w}-{mode}"));
            trace_workload(&spec, &dir, mode, &RunOptions::default()).map_err(|e| e.to_string())?;
            sets.push(event_names(&dir)?);
        }
        ensure!(sets[0].is_subset(&sets[1]), "{w}: minimal not within default");
        ensure!(sets[1].is_subset(&sets[2]), "{w}: default not within full");
        if w == "w3" {
            ensure!(!sets[1].contains(poll), "w3 default records {poll}");
            ensure!(sets[2].contains(poll), "w3 full lacks {poll}");
        }
        sizes.push(format!("{w} {}/{}/{}", sets[0].len(), sets[1].len(), sets[2].len()));
    }
    Ok(format!("name sets nest ({}); polling only in full", sizes.join(", ")))
}

#[derive(Default)]
struct Collect {
    samples: Vec<TelemetrySample>,
    device: Vec<Span>,
}

impl Sink for Collect {
    fn name(&self) -> &str {
        "collect"
    }

    fn on_message(&mut self, msg: &Message) -> Result<(), SinkError> {
        match msg {
            Message::Sample(s) => self.samples.push(s.clone()),
            Message::Span(s) if s.kind == SpanKind::DeviceCommand => self.device.push(s.clone()),
            _ => {}
        }
        Ok(())
    }
}

fn sampler_arithmetic() -> Outcome {
    let yaml = r#"
name: sampled
steps:
  - call: init
  - { call: cmdlist_create, as: cl }
  - { call: event_create, as: e }
  - call: cmdlist_append_launch_kernel
    args: { list: cl, kernel: k, groups: [120, 1000, 1], signal: e }
  - { call: cmdlist_close, args: { list: cl } }
  - { call: cmdlist_execute, args: { list: cl } }
  - { call: event_host_synchronize, args: { event: e } }
  - { call: advance_to, args: { ns: 500000000 } }
"#;
    let tmp = tempdir();
    let spec = WorkloadSpec::from_yaml(yaml).map_err(|e| e.to_string())?;
    let o = RunOptions {
        sample_period_ns: Some(50_000_000),
        ..RunOptions::default()
    };
    let (summary, _) = trace_workload(&spec, tmp.path(), TracingMode::Minimal, &o).map_err(|e| e.to_string())?;
    ensure!(summary.samples == 99, "{} samples", summary.samples);

    let reader = TraceReader::open(tmp.path()).map_err(|e| e.to_string())?;
    let mut c = Collect::default();
    run_pipeline(&reader, &mut [&mut c]).map_err(|e| e.to_string())?;
    let (samples, device) = (c.samples, c.device);
    let instants: BTreeSet<u64> = samples.iter().map(|s| s.timestamp_ns).collect();
    ensure!(instants.len() == 11, "{} instants", instants.len());
    for t in &instants {
        let n = samples.iter().filter(|s| s.timestamp_ns == *t).count();
        ensure!(n == 9, "{n} counters at {t}");
    }
    let mut busy = 0;
    for s in samples.iter().filter(|s| s.counter.is_utilization()) {
        let (tile, engine) = match s.counter {
            Counter::ComputeEngineTile0 => (0, "compute"),
            Counter::ComputeEngineTile1 => (1, "compute"),
            Counter::CopyEngineTile0 => (0, "copy"),
            _ => (1, "copy"),
        };
        let covered = device.iter().any(|d| {
            d.entry("tile").and_then(|v| v.as_u64()) == Some(tile)
                && d.entry("engine").and_then(|v| v.as_str()) == Some(engine)
                && d.start_ns <= s.timestamp_ns
                && s.timestamp_ns < d.end_ns
        });
        ensure!(
            s.value == covered as u8 as f64,
            "{} = {} at {}",
            s.counter,
            s.value,
            s.timestamp_ns
        );
        busy += covered as u32;
    }
    ensure!(busy > 0, "no instant saw the kernel");
    Ok(format!(
        "11 instants x 9 counters; {busy} busy utilization samples agree with device spans"
    ))
}

fn pretty_golden() -> Outcome {
    let tmp = tempdir();
    let o = RunOptions {
        hostname: Some("x4204c0s1b0n0".into()),
        ..RunOptions::default()
    };
    let spec = WorkloadSpec::resolve("w1").map_err(|e| e.to_string())?;
    trace_workload(&spec, tmp.path(), TracingMode::Default, &o).map_err(|e| e.to_string())?;
    let mut pretty = PrettySink::buffered();
    let reader = TraceReader::open(tmp.path()).map_err(|e| e.to_string())?;
    let report = run_pipeline(&reader, &mut [&mut pretty]).map_err(|e| e.to_string())?;
    let Some(SinkOutput::Text(text)) = report.output("pretty") else {
        return Err("no pretty output".into());
    };
    let line = text
        .lines()
        .find(|l| l.contains("ze:zeMockCommandListAppendMemoryCopy_entry"))
        .ok_or("no memcpy entry")?;
    let golden = include_str!("golden/memcpy_entry.txt").trim_end();
    ensure!(line == golden, "line differs from golden:\n  {line}\n  {golden}");
    ensure!(
        line.contains("size: 472") && line.contains("dstptr: 0xff007ffffff90000"),
        "payload fields"
    );
    Ok("memcpy entry matches golden file".into())
}

fn stream_hash(dir: &Path) -> Result<Vec<u8>, String> {
    let reader = TraceReader::open(dir).map_err(|e| e.to_string())?;
    let mut names: Vec<String> = reader.streams().iter().map(|s| s.id().file_name()).collect();
    names.sort();
    let mut h = Sha256::new();
    for n in names {
        h.update(n.as_bytes());
        h.update(std::fs::read(dir.join(&n)).map_err(|e| e.to_string())?);
    }
    Ok(h.finalize().to_vec())
}

fn determinism() -> Outcome {
    let tmp = tempdir();
    let spec = WorkloadSpec::resolve("w1").map_err(|e| e.to_string())?;
    let o = RunOptions {
        seed: Some(42),
        ..RunOptions::default()
    };
    let mut hashes = Vec::new();
    for run in ["a", "b"] {
        let dir = tmp.path().join(run);
        trace_workload(&spec, &dir, TracingMode::Full, &o).map_err(|e| e.to_string())?;
        hashes.push(stream_hash(&dir)?);
    }
    ensure!(hashes[0] == hashes[1], "stream hashes differ");
    let hex: String = hashes[0][..8].iter().map(|b| format!("{b:02x}")).collect();
    Ok(format!("sha256 {hex}... on both runs"))
}

fn timeline_schema() -> Outcome {
    let tmp = tempdir();
    let dir = tmp.path().join("t");
    let o = RunOptions {
        sample_period_ns: Some(1_000_000),
        ..RunOptions::default()
    };
    let spec = WorkloadSpec::resolve("w3").map_err(|e| e.to_string())?;
    trace_workload(&spec, &dir, TracingMode::Default, &o).map_err(|e| e.to_string())?;
    let path = tmp.path().join("timeline.json");
    let mut sink = TimelineSink::new(&path);
    let reader = TraceReader::open(&dir).map_err(|e| e.to_string())?;
    run_pipeline(&reader, &mut [&mut sink]).map_err(|e| e.to_string())?;
    let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
    let objects: Vec<serde_json::Value> = serde_json::from_slice(&bytes).map_err(|e| e.to_string())?;
    let mut tracks = BTreeSet::new();
    for (i, o) in objects.iter().enumerate() {
        check_object(o).map_err(|e| format!("object {i}: {e}"))?;
        if o["ph"] == "C" {
            tracks.insert(o["name"].as_str().unwrap_or_default().to_string());
        }
    }
    let expected = [
        "Power|Domain 0",
        "Power|Domain 1",
        "Power|Domain 2",
        "GPU Frequency|Domain 0",
        "GPU Frequency|Domain 1",
        "Compute Engine|Tile 0",
        "Compute Engine|Tile 1",
        "Copy Engine|Tile 0",
        "Copy Engine|Tile 1",
    ];
    for name in expected {
        ensure!(tracks.contains(name), "counter track `{name}` missing");
    }
    Ok(format!("{} objects valid; 9 counter tracks present", objects.len()))
}

fn overhead_bench() -> Outcome {
    let tmp = tempdir();
    let spec = WorkloadSpec::resolve("w1").map_err(|e| e.to_string())?;
    let configs: Vec<BenchConfig> = [TracingMode::Minimal, TracingMode::Default, TracingMode::Full]
        .into_iter()
        .map(|mode| BenchConfig { mode, sample: false })
        .collect();
    let report = run_bench(&spec, &configs, 5, 50_000_000, tmp.path()).map_err(|e| e.to_string())?;
    let row = |m: TracingMode| report.rows.iter().find(|r| r.config.mode == m).ok_or("missing row");
    let (min, def, full) = (
        row(TracingMode::Minimal)?,
        row(TracingMode::Default)?,
        row(TracingMode::Full)?,
    );
    let worst = report.rows.iter().map(|r| r.per_event_ns).fold(0.0, f64::max);
    ensure!(worst < 5_000.0, "per-event cost {worst:.0} ns exceeds 5 us");
    ensure!(
        min.size_bytes <= def.size_bytes && def.size_bytes <= full.size_bytes,
        "sizes {} / {} / {} not ordered",
        min.size_bytes,
        def.size_bytes,
        full.size_bytes
    );
    ensure!(
        def.size_bytes * 2 <= full.size_bytes,
        "default {} exceeds half of full {}",
        def.size_bytes,
        full.size_bytes
    );
    Ok(format!(
        "per-event <= {worst:.0} ns; sizes {} <= {} <= {} bytes (default {:.1}% of full)",
        min.size_bytes,
        def.size_bytes,
        full.size_bytes,
        def.size_bytes as f64 * 100.0 / full.size_bytes as f64
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("codec round-trip", codec_round_trip),
        ("muxer oracle", mux_oracle_match),
        ("interval oracle", interval_oracle_match),
        ("tally oracle + monoid", tally_and_monoid),
        ("validator", validator_exact),
        ("drop semantics", drop_semantics),
        ("mode filtering", mode_filtering),
        ("sampler arithmetic", sampler_arithmetic),
        ("pretty-print fixture", pretty_golden),
        ("determinism", determinism),
        ("timeline schema", timeline_schema),
        ("overhead benchmark", overhead_bench),
    ];
    // Keep panic messages out of the report; they are folded into the fail line.
    std::panic::set_hook(Box::new(|_| {}));
    let mut out = std::io::stdout().lock();
    let mut failed = 0;
    for (name, f) in criteria {
        let t0 = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t0.elapsed().as_secs_f64();
        let (tag, detail) = match result {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        let _ = writeln!(out, "[{tag}] {name} ({secs:.2}s): {detail}");
    }
    let _ = writeln!(out, "{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
