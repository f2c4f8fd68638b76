use std::ffi::CString;
use std::path::Path;
use std::process::Command;
use std::sync::Mutex;

use hapitrace::api_model::mock_model;
use hapitrace::codegen::{
    build_schema_registry, emit_interposer_source, Scenario, SchemaRegistry, TracingMode, WRITER_HEADER,
};
use hapitrace::trace::{TraceReader, Value};
use hapitrace_cbind::*;

// The binding holds process-wide state.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    let g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    // A failed test may have left a writer open.
    hapi_writer_close();
    g
}

fn registry() -> SchemaRegistry {
    build_schema_registry(&mock_model(), Scenario::Hybrid).unwrap()
}

fn open(dir: &Path, registry: &SchemaRegistry, mode: i32) -> i32 {
    let dir = CString::new(dir.to_str().unwrap()).unwrap();
    let json = CString::new(serde_json::to_string(registry).unwrap()).unwrap();
    unsafe { hapi_writer_open(dir.as_ptr(), json.as_ptr(), mode) }
}

fn encode(values: &[Value]) -> Vec<u8> {
    let mut out = Vec::new();
    for v in values {
        v.encode_into(&mut out);
    }
    out
}

#[test]
fn header_matches_the_generator_copy() {
    assert_eq!(include_str!("../include/hapitrace_writer.h"), WRITER_HEADER);
}

#[test]
fn emitted_events_read_back_exactly() {
    let _g = serial();
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("t");
    let reg = registry();
    assert_eq!(open(&dir, &reg, 2), 0);
    let init = reg.entry_of("zeMockInit").unwrap();
    let payload: Vec<Value> = init
        .fields
        .iter()
        .enumerate()
        .map(|(i, f)| match f.kind {
            hapitrace::codegen::FieldKind::Address => Value::Address(0x1000 + i as u64),
            _ => Value::U64(i as u64),
        })
        .collect();
    let bytes = encode(&payload);
    let s = hapi_stream_acquire();
    assert!(!s.is_null());
    assert_eq!(s, hapi_stream_acquire(), "one stream per thread");
    let t0 = hapi_clock_now();
    for k in 0..3 {
        let rc = unsafe { hapi_emit(s, init.id, t0 + k, bytes.as_ptr(), bytes.len() as u32) };
        assert_eq!(rc, HAPI_EMIT_WRITTEN);
    }
    assert_eq!(hapi_writer_close(), 0);

    let reader = TraceReader::open(&dir).unwrap();
    assert_eq!(reader.streams().len(), 1);
    assert_eq!(reader.streams()[0].pid, std::process::id() as u64);
    let recs = reader.read_stream(0).unwrap();
    assert_eq!(recs.len(), 3);
    for (k, r) in recs.iter().enumerate() {
        assert_eq!(r.schema_id, init.id);
        assert_eq!(r.timestamp_ns, t0 + k as u64);
        assert_eq!(r.payload, payload);
    }
}

#[test]
fn error_codes() {
    let _g = serial();
    let tmp = tempfile::tempdir().unwrap();
    let reg = registry();
    assert_eq!(hapi_writer_close(), HAPI_ERR_STATE);
    assert!(hapi_stream_acquire().is_null());
    assert_eq!(open(&tmp.path().join("a"), &reg, 7), HAPI_ERR_ARGUMENT);
    assert_eq!(
        unsafe { hapi_writer_open(std::ptr::null(), std::ptr::null(), 1) },
        HAPI_ERR_ARGUMENT
    );
    let bad = CString::new("{not json").unwrap();
    let d = CString::new(tmp.path().join("b").to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { hapi_writer_open(d.as_ptr(), bad.as_ptr(), 1) },
        HAPI_ERR_REGISTRY
    );

    assert_eq!(open(&tmp.path().join("c"), &reg, 0), 0);
    assert_eq!(open(&tmp.path().join("d"), &reg, 0), HAPI_ERR_STATE);
    let s = hapi_stream_acquire();
    let sync = reg.entry_of("zeMockEventHostSynchronize").unwrap();
    let sync_bytes = encode(&[Value::Address(1), Value::U64(0)]);
    let emit = |id: u32, b: &[u8]| unsafe { hapi_emit(s, id, 1, b.as_ptr(), b.len() as u32) };
    // Polling calls are outside the minimal mode.
    assert_eq!(emit(sync.id, &sync_bytes), HAPI_EMIT_FILTERED);
    assert_eq!(emit(u32::MAX, &[]), HAPI_ERR_UNKNOWN_SCHEMA);
    let alloc = reg.entry_of("zeMockMemAlloc").unwrap();
    let kept = reg
        .schemas()
        .iter()
        .find(|x| x.mode_mask.contains(TracingMode::Minimal) && !x.fields.is_empty())
        .unwrap();
    assert_eq!(emit(kept.id, &[1, 2, 3]), HAPI_ERR_PAYLOAD);
    assert_eq!(
        unsafe { hapi_emit(std::ptr::null_mut(), alloc.id, 0, std::ptr::null(), 0) },
        HAPI_ERR_ARGUMENT
    );
    assert_eq!(hapi_writer_close(), 0);
    // The old stream pointer stays valid but refuses events.
    let exit = reg.exit_of("zeMockInit").unwrap();
    let zeros = vec![0u8; 16];
    let rc = emit(exit.id, &zeros[..]);
    assert!(
        rc == HAPI_ERR_CLOSED || rc == HAPI_ERR_PAYLOAD || rc == HAPI_EMIT_FILTERED,
        "{rc}"
    );
}

#[test]
fn threads_get_their_own_streams() {
    let _g = serial();
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("t");
    let reg = registry();
    assert_eq!(open(&dir, &reg, 1), 0);
    let id = reg.entry_of("zeMockCommandListClose").unwrap().id;
    let bytes = encode(&[Value::Address(0xabc)]);
    std::thread::scope(|sc| {
        for _ in 0..4 {
            sc.spawn(|| {
                let s = hapi_stream_acquire();
                for k in 0..100 {
                    let rc = unsafe { hapi_emit(s, id, k, bytes.as_ptr(), bytes.len() as u32) };
                    assert!(rc == HAPI_EMIT_WRITTEN || rc == HAPI_EMIT_DROPPED);
                }
            });
        }
    });
    assert_eq!(hapi_writer_close(), 0);
    let reader = TraceReader::open(&dir).unwrap();
    assert_eq!(reader.streams().len(), 4);
    for s in reader.streams() {
        assert_eq!(s.event_count + s.dropped_count, 100);
    }
}

fn find_cc() -> Option<&'static str> {
    ["cc", "gcc", "clang"].into_iter().find(|c| {
        Command::new(c)
            .arg("--version")
            .output()
            .is_ok_and(|o| o.status.success())
    })
}

#[test]
fn generated_interposer_compiles_against_the_header() {
    let Some(cc) = find_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let tmp = tempfile::tempdir().unwrap();
    for scenario in [Scenario::Hybrid, Scenario::Automatic] {
        let model = match scenario {
            Scenario::Hybrid => mock_model(),
            Scenario::Automatic => hapitrace::api_model::mock_model_unannotated(),
        };
        let reg = build_schema_registry(&model, scenario).unwrap();
        let src = tmp.path().join("interposer.c");
        std::fs::write(&src, emit_interposer_source(&model, &reg).unwrap()).unwrap();
        let out = Command::new(cc)
            .args(["-std=c11", "-Wall", "-Werror", "-fsyntax-only", "-I"])
            .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
            .arg(&src)
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{scenario:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}
