use hapitrace::codegen::TracingMode;
use hapitrace::mock::{trace_workload, RunOptions, WorkloadSpec};
use hapitrace::pipeline::{run_pipeline, Message, Sink, SinkError, Span, SpanKind, TelemetrySample};
use hapitrace::sampler::{Counter, TelemetryModel};
use hapitrace::trace::TraceReader;

const WORKLOAD: &str = r#"
name: two_tiles
steps:
  - call: init
  - { call: cmdlist_create, args: { tile: 0 }, as: a }
  - { call: cmdlist_create, args: { tile: 1 }, as: b }
  - { call: mem_alloc, args: { space: device, size: 30000000 }, as: dev }
  - { call: mem_alloc, args: { space: host, size: 30000000 }, as: host }
  - { call: event_create, as: ea }
  - { call: event_create, as: eb }
  - call: cmdlist_append_launch_kernel
    args: { list: a, kernel: k, groups: [40, 1000, 1], signal: ea }
  - call: cmdlist_append_memory_copy
    args: { list: b, dst: dev, src: host, size: 30000000, signal: eb }
  - { call: cmdlist_close, args: { list: a } }
  - { call: cmdlist_close, args: { list: b } }
  - { call: cmdlist_execute, args: { list: a } }
  - { call: host_compute, args: { ns: 15000000 } }
  - { call: cmdlist_execute, args: { list: b } }
  - { call: event_host_synchronize, args: { event: ea } }
  - { call: event_host_synchronize, args: { event: eb } }
  - { call: advance_to, args: { ns: 100000000 } }
"#;

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

fn covered(spans: &[Span], tile: u64, engine: &str, t: u64) -> bool {
    spans.iter().any(|s| {
        s.entry("tile").and_then(|v| v.as_u64()) == Some(tile)
            && s.entry("engine").and_then(|v| v.as_str()) == Some(engine)
            && s.start_ns <= t
            && t < s.end_ns
    })
}

#[test]
fn counters_follow_device_activity() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = WorkloadSpec::from_yaml(WORKLOAD).unwrap();
    let o = RunOptions {
        sample_period_ns: Some(10_000_000),
        ..RunOptions::default()
    };
    let (summary, _) = trace_workload(&spec, tmp.path(), TracingMode::Minimal, &o).unwrap();
    assert!(summary.failures.is_empty(), "{:?}", summary.failures);
    assert_eq!(summary.samples, 11 * 9);

    let mut c = Collect::default();
    run_pipeline(&TraceReader::open(tmp.path()).unwrap(), &mut [&mut c]).unwrap();
    assert_eq!(c.samples.len(), 99);
    assert_eq!(c.device.len(), 2);
    let instants: std::collections::BTreeSet<u64> = c.samples.iter().map(|s| s.timestamp_ns).collect();
    assert_eq!(instants.len(), 11);
    assert_eq!(
        instants.iter().copied().collect::<Vec<_>>(),
        (0..11).map(|k| k * 10_000_000).collect::<Vec<_>>()
    );

    let (mut busy_compute, mut busy_copy) = (0, 0);
    for s in &c.samples {
        let expect = match s.counter {
            Counter::ComputeEngineTile0 => covered(&c.device, 0, "compute", s.timestamp_ns),
            Counter::ComputeEngineTile1 => covered(&c.device, 1, "compute", s.timestamp_ns),
            Counter::CopyEngineTile0 => covered(&c.device, 0, "copy", s.timestamp_ns),
            Counter::CopyEngineTile1 => covered(&c.device, 1, "copy", s.timestamp_ns),
            _ => continue,
        };
        assert_eq!(
            s.value,
            if expect { 1.0 } else { 0.0 },
            "{} at {}",
            s.counter,
            s.timestamp_ns
        );
        busy_compute += (s.counter == Counter::ComputeEngineTile0 && expect) as u32;
        busy_copy += (s.counter == Counter::CopyEngineTile1 && expect) as u32;
    }
    assert!(
        busy_compute > 0 && busy_copy > 0,
        "the workload keeps both engines busy at some instant"
    );

    // Power follows the model from the same utilization values.
    let m = TelemetryModel::default();
    for t in instants {
        let at = |k: Counter| {
            c.samples
                .iter()
                .find(|s| s.timestamp_ns == t && s.counter == k)
                .unwrap()
                .value
        };
        let tile = |c: f64, k: f64| m.idle_watts + m.compute_watts * c + m.copy_watts * k;
        let p1 = tile(at(Counter::ComputeEngineTile0), at(Counter::CopyEngineTile0));
        let p2 = tile(at(Counter::ComputeEngineTile1), at(Counter::CopyEngineTile1));
        assert_eq!(at(Counter::PowerDomain1), p1);
        assert_eq!(at(Counter::PowerDomain2), p2);
        assert_eq!(at(Counter::PowerDomain0), p1 + p2 + m.chip_overhead_watts);
        assert_eq!(at(Counter::FrequencyDomain0), m.frequency_mhz);
    }
}

#[test]
fn untraced_sampling_is_off() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = WorkloadSpec::from_yaml(WORKLOAD).unwrap();
    let (summary, infos) = trace_workload(&spec, tmp.path(), TracingMode::Minimal, &RunOptions::default()).unwrap();
    assert_eq!(summary.samples, 0);
    let reader = TraceReader::open(tmp.path()).unwrap();
    let reg = reader.registry().clone();
    for i in 0..infos.len() {
        for r in reader.read_stream(i).unwrap() {
            assert!(Counter::from_schema_name(&reg.get(r.schema_id).unwrap().name).is_none());
        }
    }
}
