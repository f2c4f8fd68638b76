//! C ABI over the hapitrace writer, declared in `include/hapitrace_writer.h`.
//!
//! One writer per process. Each thread gets its own stream, cached in a
//! thread-local; stream pointers stay valid for the life of the process,
//! and emitting on a stream of a closed writer returns an error.

use std::cell::Cell;
use std::ffi::{c_char, c_int, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::{Arc, Mutex};

use hapitrace::codegen::{SchemaRegistry, TracingMode};
use hapitrace::trace::{
    decode_payload, monotonic_now_ns, open_trace_writer, ClockKind, EmitOutcome, StreamHandle, TraceError, TraceWriter,
    WriterConfig,
};

pub const HAPI_EMIT_WRITTEN: c_int = 0;
pub const HAPI_EMIT_FILTERED: c_int = 1;
pub const HAPI_EMIT_DROPPED: c_int = 2;

/// Null pointer or out-of-range argument.
pub const HAPI_ERR_ARGUMENT: c_int = -1;
/// `hapi_writer_open` while a writer is open, or close without one.
pub const HAPI_ERR_STATE: c_int = -2;
pub const HAPI_ERR_REGISTRY: c_int = -3;
/// Filesystem failure while opening, draining or finalizing.
pub const HAPI_ERR_IO: c_int = -4;
pub const HAPI_ERR_UNKNOWN_SCHEMA: c_int = -5;
pub const HAPI_ERR_PAYLOAD: c_int = -6;
pub const HAPI_ERR_CLOSED: c_int = -7;
pub const HAPI_ERR_PANIC: c_int = -99;

/// Opaque to C.
pub struct HapiStream {
    handle: StreamHandle,
}

struct Global {
    writer: Option<Arc<TraceWriter>>,
    generation: u64,
    /// Every stream handed out; kept so pointers never dangle.
    streams: Vec<Box<HapiStream>>,
}

static GLOBAL: Mutex<Global> = Mutex::new(Global {
    writer: None,
    generation: 0,
    streams: Vec::new(),
});

thread_local! {
    static CACHED: Cell<(u64, *mut HapiStream)> = const { Cell::new((0, ptr::null_mut())) };
}

fn global() -> std::sync::MutexGuard<'static, Global> {
    GLOBAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn guarded<T>(fallback: T, f: impl FnOnce() -> T) -> T {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or(fallback)
}

fn mode_from_int(mode: c_int) -> Option<TracingMode> {
    match mode {
        0 => Some(TracingMode::Minimal),
        1 => Some(TracingMode::Default),
        2 => Some(TracingMode::Full),
        _ => None,
    }
}

/// # Safety
/// `dir` and `registry_json` must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn hapi_writer_open(dir: *const c_char, registry_json: *const c_char, mode: c_int) -> c_int {
    guarded(HAPI_ERR_PANIC, || {
        if dir.is_null() || registry_json.is_null() {
            return HAPI_ERR_ARGUMENT;
        }
        let Some(mode) = mode_from_int(mode) else {
            return HAPI_ERR_ARGUMENT;
        };
        // SAFETY: both pointers are non-null and NUL-terminated per the contract.
        let (dir, json) = unsafe { (CStr::from_ptr(dir), CStr::from_ptr(registry_json)) };
        let (Ok(dir), Ok(json)) = (dir.to_str(), json.to_str()) else {
            return HAPI_ERR_ARGUMENT;
        };
        let Ok(registry) = serde_json::from_str::<SchemaRegistry>(json) else {
            return HAPI_ERR_REGISTRY;
        };
        let mut g = global();
        if g.writer.is_some() {
            return HAPI_ERR_STATE;
        }
        let config = WriterConfig {
            mode,
            clock: ClockKind::MonotonicWall,
            ..WriterConfig::default()
        };
        match open_trace_writer(dir, registry, config) {
            Ok(w) => {
                g.writer = Some(Arc::new(w));
                g.generation += 1;
                0
            }
            Err(_) => HAPI_ERR_IO,
        }
    })
}

#[no_mangle]
pub extern "C" fn hapi_stream_acquire() -> *mut HapiStream {
    guarded(ptr::null_mut(), || {
        let (generation, cached) = CACHED.with(Cell::get);
        let mut g = global();
        let Some(writer) = g.writer.clone() else {
            return ptr::null_mut();
        };
        if generation == g.generation && !cached.is_null() {
            return cached;
        }
        let Ok(handle) = writer.thread_stream() else {
            return ptr::null_mut();
        };
        let mut boxed = Box::new(HapiStream { handle });
        let p: *mut HapiStream = &mut *boxed;
        g.streams.push(boxed);
        CACHED.with(|c| c.set((g.generation, p)));
        p
    })
}

/// # Safety
/// `stream` must come from [`hapi_stream_acquire`]; `payload` must point to
/// `len` readable bytes (or be null with `len == 0`).
#[no_mangle]
pub unsafe extern "C" fn hapi_emit(
    stream: *mut HapiStream,
    schema_id: u32,
    timestamp_ns: u64,
    payload: *const u8,
    len: u32,
) -> c_int {
    guarded(HAPI_ERR_PANIC, || {
        if stream.is_null() || (payload.is_null() && len != 0) {
            return HAPI_ERR_ARGUMENT;
        }
        // SAFETY: stream pointers are owned by GLOBAL and never freed.
        let handle = unsafe { &(*stream).handle };
        let Some(schema) = handle.registry().get(schema_id) else {
            return HAPI_ERR_UNKNOWN_SCHEMA;
        };
        if !handle.is_enabled(schema_id) {
            return HAPI_EMIT_FILTERED;
        }
        let bytes = if len == 0 {
            &[][..]
        } else {
            // SAFETY: caller guarantees `len` readable bytes.
            unsafe { std::slice::from_raw_parts(payload, len as usize) }
        };
        let Ok(values) = decode_payload(schema, bytes) else {
            return HAPI_ERR_PAYLOAD;
        };
        match handle.emit(schema_id, timestamp_ns, values) {
            Ok(EmitOutcome::Written) => HAPI_EMIT_WRITTEN,
            Ok(EmitOutcome::Filtered) => HAPI_EMIT_FILTERED,
            Ok(EmitOutcome::Dropped) => HAPI_EMIT_DROPPED,
            Err(TraceError::WriterClosed) => HAPI_ERR_CLOSED,
            Err(_) => HAPI_ERR_IO,
        }
    })
}

#[no_mangle]
pub extern "C" fn hapi_clock_now() -> u64 {
    monotonic_now_ns()
}

#[no_mangle]
pub extern "C" fn hapi_writer_close() -> c_int {
    guarded(HAPI_ERR_PANIC, || {
        let Some(writer) = global().writer.take() else {
            return HAPI_ERR_STATE;
        };
        match writer.finalize() {
            Ok(_) => 0,
            Err(_) => HAPI_ERR_IO,
        }
    })
}
