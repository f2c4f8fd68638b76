mod common;

use std::sync::mpsc;
use std::time::{Duration, Instant};

use common::*;
use hapitrace::codegen::TracingMode;
use hapitrace::mock::{trace_workload, RunOptions, WorkloadSpec};
use hapitrace::trace::{open_trace_writer, DrainPolicy, EmitOutcome, StreamId, TraceReader, WriterConfig};
use sha2::{Digest, Sha256};

fn manual(capacity: usize) -> WriterConfig {
    WriterConfig {
        buffer_capacity: capacity,
        drain: DrainPolicy::Manual,
        ..WriterConfig::default()
    }
}

#[test]
fn full_buffers_drop_and_count() {
    let tmp = tempfile::tempdir().unwrap();
    let reg = mock_registry();
    let init = reg.entry_of("zeMockInit").unwrap().clone();
    let w = open_trace_writer(tmp.path(), reg, manual(2)).unwrap();
    let s = w.acquire_stream(StreamId::new("h", 1, 1)).unwrap();
    let outcomes: Vec<_> = (0..5)
        .map(|t| s.emit(init.id, t, zero_payload(&init)).unwrap())
        .collect();
    assert_eq!(outcomes[..2], [EmitOutcome::Written, EmitOutcome::Written]);
    assert!(outcomes[2..].iter().all(|o| *o == EmitOutcome::Dropped));
    // After a drain the buffer accepts events again.
    assert_eq!(w.drain().unwrap(), 2);
    assert_eq!(s.emit(init.id, 9, zero_payload(&init)).unwrap(), EmitOutcome::Written);
    let infos = w.finalize().unwrap();
    assert_eq!((infos[0].event_count, infos[0].dropped_count), (3, 3));

    let reader = TraceReader::open(tmp.path()).unwrap();
    let ts: Vec<u64> = reader.read_stream(0).unwrap().iter().map(|r| r.timestamp_ns).collect();
    assert_eq!(ts, [0, 1, 9], "the oldest events are kept");
    assert_eq!(reader.streams()[0].dropped_count, 3);
}

#[test]
fn a_stalled_drainer_never_blocks_emitters() {
    let tmp = tempfile::tempdir().unwrap();
    let reg = mock_registry();
    let init = reg.entry_of("zeMockInit").unwrap().clone();
    let w = open_trace_writer(tmp.path(), reg, manual(16)).unwrap();
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|sc| {
        sc.spawn(|| {
            let s = w.thread_stream().unwrap();
            let payload = zero_payload(&init);
            let mut worst = Duration::ZERO;
            let mut dropped = 0;
            for t in 0..10_000 {
                let t0 = Instant::now();
                let o = s.emit(init.id, t, payload.clone()).unwrap();
                worst = worst.max(t0.elapsed());
                dropped += (o == EmitOutcome::Dropped) as u64;
            }
            tx.send((worst, dropped)).unwrap();
        });
        let (worst, dropped) = rx.recv_timeout(Duration::from_millis(100)).expect("emitter blocked");
        assert_eq!(dropped, 10_000 - 16);
        assert!(worst < Duration::from_millis(10), "{worst:?}");
    });
    w.finalize().unwrap();
}

#[test]
fn filtered_events_are_not_drops() {
    let tmp = tempfile::tempdir().unwrap();
    let reg = mock_registry();
    let poll = reg.entry_of("zeMockEventHostSynchronize").unwrap().clone();
    let w = open_trace_writer(
        tmp.path(),
        reg,
        WriterConfig {
            mode: TracingMode::Default,
            ..manual(4)
        },
    )
    .unwrap();
    let s = w.acquire_stream(StreamId::new("h", 1, 1)).unwrap();
    for t in 0..10 {
        assert_eq!(s.emit(poll.id, t, zero_payload(&poll)).unwrap(), EmitOutcome::Filtered);
    }
    let info = &w.finalize().unwrap()[0];
    assert_eq!((info.event_count, info.dropped_count, info.filtered_count), (0, 0, 10));
}

fn digest(dir: &std::path::Path) -> Vec<u8> {
    let reader = TraceReader::open(dir).unwrap();
    let mut h = Sha256::new();
    let mut names: Vec<_> = reader.streams().iter().map(|s| s.id().file_name()).collect();
    names.sort();
    for n in names {
        h.update(n.as_bytes());
        h.update(std::fs::read(dir.join(n)).unwrap());
    }
    h.finalize().to_vec()
}

#[test]
fn virtual_clock_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = WorkloadSpec::resolve("w1").unwrap();
    let o = RunOptions {
        seed: Some(42),
        ..RunOptions::default()
    };
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    trace_workload(&spec, &a, TracingMode::Full, &o).unwrap();
    trace_workload(&spec, &b, TracingMode::Full, &o).unwrap();
    assert_eq!(digest(&a), digest(&b));
}

#[test]
fn non_empty_directories_are_refused() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("x"), "").unwrap();
    assert!(open_trace_writer(tmp.path(), mock_registry(), manual(4)).is_err());
}
