use std::collections::HashMap;
use std::sync::Arc;

use super::registry::{function_plan, Capture, DerefRead, FieldKind, FunctionPlan, MAX_CAPTURE_BYTES};
use super::{CodegenError, SchemaRegistry};
use crate::api_model::{fingerprint, ApiModel};
use crate::trace::{monotonic_now_ns, ClockKind, StreamHandle, TraceError, Value};

/// A device command that finished executing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletedCommand {
    /// The append call that enqueued the command.
    pub function: String,
    /// `memcpy` or `kernel`.
    pub kind: String,
    /// Kernel name, or `memcpy_h2d`/`memcpy_d2h`/`memcpy_d2d`/`memcpy_h2h`.
    pub name: String,
    pub start_ns: u64,
    pub end_ns: u64,
    pub device: u64,
    pub tile: u64,
    /// `compute` or `copy`.
    pub engine: String,
    /// Raw arguments of the append call.
    pub args: Vec<u64>,
}

/// The traced runtime as seen by the in-process wrappers.
pub trait Backend {
    /// Runs `function`; `None` if the runtime does not implement it.
    fn invoke(&mut self, function: &str, args: &[u64]) -> Option<i64>;
    /// Host-visible bytes at `addr`, or `None` if not mapped.
    fn read_memory(&self, addr: u64, len: usize) -> Option<Vec<u8>>;
    /// NUL-terminated bytes at `addr`, at most `max` of them.
    fn read_cstring(&self, addr: u64, max: usize) -> Option<Vec<u8>>;
    /// Current virtual time.
    fn now(&self) -> u64;
    /// Commands completed since the previous call.
    fn take_completed(&mut self) -> Vec<CompletedCommand>;
}

#[derive(Debug, thiserror::Error)]
pub enum DispatchError {
    #[error("no wrapper for function `{0}`")]
    UnknownFunction(String),
    #[error("`{function}` takes {expected} arguments, got {got}")]
    Arity {
        function: String,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Trace(#[from] TraceError),
}

struct Wrapper {
    plan: FunctionPlan,
    entry_id: u32,
    exit_id: u32,
    profiling_id: Option<u32>,
}

/// Function name to in-process wrapper, equivalent to the generated C interposer.
#[derive(Clone)]
pub struct DispatchTable {
    wrappers: Arc<HashMap<String, Wrapper>>,
    clock: ClockKind,
}

impl DispatchTable {
    pub fn new(model: &ApiModel, registry: &SchemaRegistry) -> Result<Self, CodegenError> {
        let fp = fingerprint(model);
        if fp != registry.fingerprint {
            return Err(CodegenError::FingerprintMismatch {
                registry: registry.fingerprint,
                model: fp,
            });
        }
        let mut wrappers = HashMap::with_capacity(model.functions.len());
        for f in &model.functions {
            let plan = function_plan(model, f, registry.scenario)?;
            let entry_id = registry.entry_of(&f.name).expect("entry schema").id;
            let exit_id = registry.exit_of(&f.name).expect("exit schema").id;
            let profiling_id = registry.profiling_of(&f.name).map(|s| s.id);
            wrappers.insert(
                f.name.clone(),
                Wrapper {
                    plan,
                    entry_id,
                    exit_id,
                    profiling_id,
                },
            );
        }
        Ok(DispatchTable {
            wrappers: Arc::new(wrappers),
            clock: ClockKind::Virtual,
        })
    }

    /// Selects where event timestamps come from.
    pub fn with_clock(mut self, clock: ClockKind) -> Self {
        self.clock = clock;
        self
    }

    pub fn contains(&self, function: &str) -> bool {
        self.wrappers.contains_key(function)
    }

    pub fn functions(&self) -> impl Iterator<Item = &str> {
        self.wrappers.keys().map(String::as_str)
    }

    fn timestamp(&self, backend: &dyn Backend) -> u64 {
        match self.clock {
            ClockKind::Virtual => backend.now(),
            ClockKind::MonotonicWall => monotonic_now_ns(),
        }
    }

    /// Traces one call: entry event, the call itself, exit event, then
    /// profiling events for any device commands that completed meanwhile.
    pub fn call(
        &self,
        backend: &mut dyn Backend,
        stream: &StreamHandle,
        function: &str,
        args: &[u64],
    ) -> Result<i64, DispatchError> {
        let w = self
            .wrappers
            .get(function)
            .ok_or_else(|| DispatchError::UnknownFunction(function.to_string()))?;
        let expected = w
            .plan
            .entry
            .iter()
            .filter(|(_, c)| matches!(c, Capture::Arg { .. }))
            .count();
        if args.len() != expected {
            return Err(DispatchError::Arity {
                function: function.to_string(),
                expected,
                got: args.len(),
            });
        }
        let ts = self.timestamp(backend);
        stream.emit_with(w.entry_id, ts, || {
            w.plan
                .entry
                .iter()
                .map(|(_, c)| capture(&*backend, c, args, 0))
                .collect()
        })?;
        let result = backend
            .invoke(function, args)
            .ok_or_else(|| DispatchError::UnknownFunction(function.to_string()))?;
        let ts = self.timestamp(backend);
        stream.emit_with(w.exit_id, ts, || {
            w.plan
                .exit
                .iter()
                .map(|(_, c)| capture(&*backend, c, args, result))
                .collect()
        })?;
        self.flush_completed(backend, stream)?;
        Ok(result)
    }

    /// Emits profiling events for completed device commands.
    pub fn flush_completed(&self, backend: &mut dyn Backend, stream: &StreamHandle) -> Result<usize, DispatchError> {
        let done = backend.take_completed();
        if done.is_empty() {
            return Ok(0);
        }
        let ts = self.timestamp(backend);
        let mut n = 0;
        for cmd in done {
            let Some((w, id)) = self
                .wrappers
                .get(&cmd.function)
                .and_then(|w| w.profiling_id.map(|id| (w, id)))
            else {
                continue;
            };
            stream.emit_with(id, ts, || profiling_payload(&w.plan, &cmd))?;
            n += 1;
        }
        Ok(n)
    }
}

/// Payload of a device-profiling event for `cmd`.
pub(crate) fn profiling_payload(plan: &FunctionPlan, cmd: &CompletedCommand) -> Vec<Value> {
    let mut v = vec![
        Value::U64(cmd.start_ns),
        Value::U64(cmd.end_ns),
        Value::String(cmd.kind.clone()),
        Value::String(cmd.name.clone()),
        Value::U64(cmd.device),
        Value::U64(cmd.tile),
        Value::String(cmd.engine.clone()),
    ];
    for (spec, idx) in &plan.profiling_detail {
        v.push(arg_value(spec.kind, cmd.args.get(*idx).copied().unwrap_or(0)));
    }
    v
}

fn arg_value(kind: FieldKind, raw: u64) -> Value {
    match kind {
        FieldKind::U64 => Value::U64(raw),
        FieldKind::I64 => Value::I64(raw as i64),
        FieldKind::F64 => Value::F64(f64::from_bits(raw)),
        FieldKind::Address => Value::Address(raw),
        FieldKind::String => Value::String(String::new()),
        FieldKind::Blob => Value::Blob(Vec::new()),
    }
}

fn zero(kind: FieldKind) -> Value {
    arg_value(kind, 0)
}

fn scalar_from_bytes(bytes: &[u8], kind: FieldKind) -> Value {
    let mut buf = [0u8; 8];
    buf[..bytes.len()].copy_from_slice(bytes);
    let raw = u64::from_le_bytes(buf);
    match kind {
        FieldKind::I64 => {
            let shift = 64 - 8 * bytes.len() as u32;
            Value::I64(((raw << shift) as i64) >> shift)
        }
        FieldKind::F64 if bytes.len() == 4 => Value::F64(f32::from_bits(raw as u32) as f64),
        other => arg_value(other, raw),
    }
}

fn capture(backend: &dyn Backend, c: &Capture, args: &[u64], result: i64) -> Value {
    match c {
        Capture::Arg { index, kind } => arg_value(*kind, args[*index]),
        Capture::Result { kind } => arg_value(*kind, result as u64),
        Capture::Deref { index, read } => {
            let ptr = args[*index];
            match read {
                DerefRead::Value { offset, width, kind } => {
                    if ptr == 0 {
                        return zero(*kind);
                    }
                    match backend.read_memory(ptr + *offset as u64, *width) {
                        Some(b) => scalar_from_bytes(&b, *kind),
                        None => zero(*kind),
                    }
                }
                DerefRead::String => {
                    let bytes = if ptr == 0 {
                        None
                    } else {
                        backend.read_cstring(ptr, MAX_CAPTURE_BYTES)
                    };
                    Value::String(String::from_utf8_lossy(&bytes.unwrap_or_default()).into_owned())
                }
                DerefRead::Array { length_arg, elem_size } => {
                    let len = (args[*length_arg] as usize)
                        .saturating_mul(*elem_size)
                        .min(MAX_CAPTURE_BYTES);
                    blob(backend, ptr, len)
                }
                DerefRead::Blob { size } => blob(backend, ptr, *size),
            }
        }
    }
}

fn blob(backend: &dyn Backend, ptr: u64, len: usize) -> Value {
    if ptr == 0 || len == 0 {
        return Value::Blob(Vec::new());
    }
    Value::Blob(backend.read_memory(ptr, len).unwrap_or_default())
}
