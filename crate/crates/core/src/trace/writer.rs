use std::cell::RefCell;
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;
use std::time::Duration;

use crossbeam_queue::ArrayQueue;

use super::codec::{check_payload, encode_record, encode_stream_header};
use super::{ClockKind, EventRecord, StreamId, StreamInfo, TraceError, TraceMetadata, Value};
use crate::api_model::ApiModel;
use crate::codegen::{SchemaRegistry, TracingMode};

pub const DEFAULT_BUFFER_CAPACITY: usize = 1 << 16;
/// Environment variable overriding the per-stream buffer capacity.
pub const BUFFER_CAP_ENV: &str = "HAPITRACE_BUFFER_CAP";

/// Capacity from `HAPITRACE_BUFFER_CAP` if set to a positive integer.
pub fn default_buffer_capacity() -> usize {
    std::env::var(BUFFER_CAP_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or(DEFAULT_BUFFER_CAPACITY)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrainPolicy {
    /// A drainer thread empties buffers every `interval`.
    Background { interval: Duration },
    /// Buffers are emptied only by [`TraceWriter::drain`] and at finalize.
    Manual,
}

impl Default for DrainPolicy {
    fn default() -> Self {
        DrainPolicy::Background {
            interval: Duration::from_micros(200),
        }
    }
}

#[derive(Debug, Clone)]
pub struct WriterConfig {
    pub mode: TracingMode,
    pub clock: ClockKind,
    /// Events each stream can hold before the drainer catches up.
    pub buffer_capacity: usize,
    pub drain: DrainPolicy,
    /// Hostname used by [`TraceWriter::thread_stream`].
    pub hostname: String,
    /// Stored in the metadata so analyses can consult the model.
    pub model: Option<ApiModel>,
}

impl Default for WriterConfig {
    fn default() -> Self {
        WriterConfig {
            mode: TracingMode::Default,
            clock: ClockKind::Virtual,
            buffer_capacity: default_buffer_capacity(),
            drain: DrainPolicy::default(),
            hostname: local_hostname(),
            model: None,
        }
    }
}

pub(crate) fn local_hostname() -> String {
    let mut buf = [0u8; 256];
    // SAFETY: buffer is valid for its full length; gethostname NUL-terminates on success.
    let rc = unsafe { libc::gethostname(buf.as_mut_ptr().cast(), buf.len()) };
    if rc != 0 {
        return "localhost".into();
    }
    let end = buf.iter().position(|b| *b == 0).unwrap_or(buf.len());
    String::from_utf8_lossy(&buf[..end]).into_owned()
}

pub(crate) fn os_tid() -> u64 {
    // SAFETY: gettid has no preconditions.
    unsafe { libc::syscall(libc::SYS_gettid) as u64 }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmitOutcome {
    Written,
    /// The schema is outside the writer's tracing mode.
    Filtered,
    /// The stream buffer was full; the event was discarded.
    Dropped,
}

struct StreamFile {
    path: PathBuf,
    out: BufWriter<File>,
    scratch: Vec<u8>,
}

struct StreamState {
    id: StreamId,
    queue: ArrayQueue<EventRecord>,
    accepted: AtomicU64,
    dropped: AtomicU64,
    filtered: AtomicU64,
    file: Mutex<StreamFile>,
}

impl StreamState {
    /// Moves everything queued so far into the stream file.
    fn drain(&self) -> Result<usize, TraceError> {
        let mut file = self.file.lock().unwrap();
        let StreamFile { path, out, scratch } = &mut *file;
        let mut n = 0;
        while let Some(rec) = self.queue.pop() {
            scratch.clear();
            encode_record(&rec, scratch);
            out.write_all(scratch).map_err(|e| TraceError::io(path.clone(), e))?;
            n += 1;
        }
        Ok(n)
    }

    fn flush(&self) -> Result<(), TraceError> {
        let mut file = self.file.lock().unwrap();
        let path = file.path.clone();
        file.out.flush().map_err(|e| TraceError::io(path, e))
    }

    fn info(&self) -> StreamInfo {
        StreamInfo {
            hostname: self.id.hostname.clone(),
            pid: self.id.pid,
            tid: self.id.tid,
            event_count: self.accepted.load(Ordering::Acquire),
            dropped_count: self.dropped.load(Ordering::Acquire),
            filtered_count: self.filtered.load(Ordering::Acquire),
        }
    }
}

struct Shared {
    id: u64,
    dir: PathBuf,
    registry: Arc<SchemaRegistry>,
    enabled: Vec<bool>,
    config: WriterConfig,
    streams: RwLock<Vec<Arc<StreamState>>>,
    index: Mutex<HashMap<StreamId, usize>>,
    closed: AtomicBool,
    paused: AtomicBool,
    stop: AtomicBool,
    io_error: Mutex<Option<String>>,
}

impl Shared {
    fn drain_all(&self) -> Result<usize, TraceError> {
        let streams: Vec<Arc<StreamState>> = self.streams.read().unwrap().clone();
        let mut total = 0;
        for s in streams {
            match s.drain() {
                Ok(n) => total += n,
                Err(e) => {
                    self.io_error.lock().unwrap().get_or_insert_with(|| e.to_string());
                    return Err(e);
                }
            }
        }
        Ok(total)
    }
}

/// Handle to an open trace directory.
pub struct TraceWriter {
    shared: Arc<Shared>,
    drainer: Mutex<Option<JoinHandle<()>>>,
}

/// A stream bound to one (hostname, pid, tid) identity.
#[derive(Clone)]
pub struct StreamHandle {
    state: Arc<StreamState>,
    shared: Arc<Shared>,
}

static NEXT_WRITER_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static THREAD_STREAMS: RefCell<Vec<(u64, StreamHandle)>> = const { RefCell::new(Vec::new()) };
}

/// Creates the trace directory and writes its initial metadata.
pub fn open_trace_writer(
    dir: impl AsRef<Path>,
    registry: SchemaRegistry,
    config: WriterConfig,
) -> Result<TraceWriter, TraceError> {
    let dir = dir.as_ref().to_path_buf();
    if dir.exists() {
        let mut entries = std::fs::read_dir(&dir).map_err(|e| TraceError::io(&dir, e))?;
        if entries.next().is_some() {
            return Err(TraceError::DirectoryNotEmpty(dir));
        }
    } else {
        std::fs::create_dir_all(&dir).map_err(|e| TraceError::io(&dir, e))?;
    }
    TraceMetadata::new(registry.clone(), config.mode, config.clock, config.model.clone()).store(&dir)?;

    let enabled = registry
        .schemas()
        .iter()
        .map(|s| s.mode_mask.contains(config.mode))
        .collect();
    let config = WriterConfig {
        buffer_capacity: config.buffer_capacity.max(1),
        ..config
    };
    let drain = config.drain;
    let shared = Arc::new(Shared {
        id: NEXT_WRITER_ID.fetch_add(1, Ordering::Relaxed),
        dir,
        registry: Arc::new(registry),
        enabled,
        config,
        streams: RwLock::new(Vec::new()),
        index: Mutex::new(HashMap::new()),
        closed: AtomicBool::new(false),
        paused: AtomicBool::new(false),
        stop: AtomicBool::new(false),
        io_error: Mutex::new(None),
    });
    let drainer = match drain {
        DrainPolicy::Manual => None,
        DrainPolicy::Background { interval } => {
            let shared = Arc::clone(&shared);
            Some(
                std::thread::Builder::new()
                    .name("hapitrace-drain".into())
                    .spawn(move || {
                        while !shared.stop.load(Ordering::Acquire) {
                            if !shared.paused.load(Ordering::Acquire) {
                                let _ = shared.drain_all();
                            }
                            std::thread::sleep(interval);
                        }
                    })
                    .map_err(|e| TraceError::io(PathBuf::from("<drainer thread>"), e))?,
            )
        }
    };
    Ok(TraceWriter {
        shared,
        drainer: Mutex::new(drainer),
    })
}

impl TraceWriter {
    pub fn dir(&self) -> &Path {
        &self.shared.dir
    }

    pub fn registry(&self) -> &SchemaRegistry {
        &self.shared.registry
    }

    pub fn mode(&self) -> TracingMode {
        self.shared.config.mode
    }

    pub fn config(&self) -> &WriterConfig {
        &self.shared.config
    }

    pub fn is_closed(&self) -> bool {
        self.shared.closed.load(Ordering::Acquire)
    }

    /// Returns the stream for `id`, creating its file on first use.
    pub fn acquire_stream(&self, id: StreamId) -> Result<StreamHandle, TraceError> {
        if self.is_closed() {
            return Err(TraceError::WriterClosed);
        }
        let mut index = self.shared.index.lock().unwrap();
        if let Some(&i) = index.get(&id) {
            return Ok(StreamHandle {
                state: Arc::clone(&self.shared.streams.read().unwrap()[i]),
                shared: Arc::clone(&self.shared),
            });
        }
        let path = self.shared.dir.join(id.file_name());
        let file = File::create(&path).map_err(|e| TraceError::io(&path, e))?;
        let mut out = BufWriter::with_capacity(1 << 16, file);
        let mut header = Vec::new();
        encode_stream_header(&mut header);
        out.write_all(&header).map_err(|e| TraceError::io(&path, e))?;
        let state = Arc::new(StreamState {
            id: id.clone(),
            queue: ArrayQueue::new(self.shared.config.buffer_capacity),
            accepted: AtomicU64::new(0),
            dropped: AtomicU64::new(0),
            filtered: AtomicU64::new(0),
            file: Mutex::new(StreamFile {
                path,
                out,
                scratch: Vec::with_capacity(256),
            }),
        });
        let mut streams = self.shared.streams.write().unwrap();
        index.insert(id, streams.len());
        streams.push(Arc::clone(&state));
        Ok(StreamHandle {
            state,
            shared: Arc::clone(&self.shared),
        })
    }

    /// Stream of the calling OS thread (current pid and tid), cached per thread.
    pub fn thread_stream(&self) -> Result<StreamHandle, TraceError> {
        let wid = self.shared.id;
        if let Some(h) = THREAD_STREAMS.with(|c| c.borrow().iter().find(|(id, _)| *id == wid).map(|(_, h)| h.clone())) {
            return Ok(h);
        }
        let id = StreamId::new(self.shared.config.hostname.clone(), std::process::id() as u64, os_tid());
        let h = self.acquire_stream(id)?;
        THREAD_STREAMS.with(|c| {
            let mut c = c.borrow_mut();
            c.retain(|(_, h)| !h.shared.closed.load(Ordering::Acquire));
            c.push((wid, h.clone()));
        });
        Ok(h)
    }

    /// Empties every stream buffer into its file; returns the number of records moved.
    pub fn drain(&self) -> Result<usize, TraceError> {
        self.shared.drain_all()
    }

    /// Stops or resumes the background drainer (no effect under manual draining).
    pub fn set_drainer_paused(&self, paused: bool) {
        self.shared.paused.store(paused, Ordering::Release);
    }

    /// Live per-stream counters.
    pub fn stream_infos(&self) -> Vec<StreamInfo> {
        let mut v: Vec<StreamInfo> = self.shared.streams.read().unwrap().iter().map(|s| s.info()).collect();
        v.sort_by(|a, b| a.id().cmp(&b.id()));
        v
    }

    /// Flushes all buffers, writes the stream index and closes the writer.
    ///
    /// Emits racing with this call are not supported. If any write failed the
    /// metadata is left marked incomplete and the first I/O error is returned.
    pub fn finalize(&self) -> Result<Vec<StreamInfo>, TraceError> {
        if self.shared.closed.swap(true, Ordering::AcqRel) {
            return Err(TraceError::WriterClosed);
        }
        self.shared.stop.store(true, Ordering::Release);
        if let Some(h) = self.drainer.lock().unwrap().take() {
            let _ = h.join();
        }
        let mut result = self.shared.drain_all().map(|_| ());
        if result.is_ok() {
            for s in self.shared.streams.read().unwrap().iter() {
                if let Err(e) = s.flush() {
                    result = Err(e);
                    break;
                }
            }
        }
        let prior_error = self.shared.io_error.lock().unwrap().clone();
        let infos = self.stream_infos();
        let mut meta = TraceMetadata::new(
            (*self.shared.registry).clone(),
            self.shared.config.mode,
            self.shared.config.clock,
            self.shared.config.model.clone(),
        );
        meta.streams = infos.clone();
        meta.complete = result.is_ok() && prior_error.is_none();
        meta.store(&self.shared.dir)?;
        result?;
        if let Some(message) = prior_error {
            return Err(TraceError::io(&self.shared.dir, std::io::Error::other(message)));
        }
        Ok(infos)
    }
}

impl Drop for TraceWriter {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::Release);
        if let Some(h) = self.drainer.lock().unwrap().take() {
            let _ = h.join();
        }
    }
}

impl StreamHandle {
    pub fn id(&self) -> &StreamId {
        &self.state.id
    }

    pub fn registry(&self) -> &SchemaRegistry {
        &self.shared.registry
    }

    /// Whether events of `schema_id` pass the writer's tracing mode.
    pub fn is_enabled(&self, schema_id: u32) -> bool {
        self.shared.enabled.get(schema_id as usize).copied().unwrap_or(false)
    }

    /// Non-blocking emit. A full buffer drops the incoming event.
    pub fn emit(&self, schema_id: u32, timestamp_ns: u64, payload: Vec<Value>) -> Result<EmitOutcome, TraceError> {
        self.emit_record(EventRecord {
            schema_id,
            timestamp_ns,
            payload,
        })
    }

    /// Like [`emit`](Self::emit), but builds the payload only if the schema
    /// passes the tracing mode.
    pub fn emit_with(
        &self,
        schema_id: u32,
        timestamp_ns: u64,
        payload: impl FnOnce() -> Vec<Value>,
    ) -> Result<EmitOutcome, TraceError> {
        if !self.shared.closed.load(Ordering::Acquire)
            && schema_id < self.shared.enabled.len() as u32
            && !self.shared.enabled[schema_id as usize]
        {
            self.state.filtered.fetch_add(1, Ordering::Relaxed);
            return Ok(EmitOutcome::Filtered);
        }
        self.emit(schema_id, timestamp_ns, payload())
    }

    pub fn emit_record(&self, rec: EventRecord) -> Result<EmitOutcome, TraceError> {
        if self.shared.closed.load(Ordering::Acquire) {
            return Err(TraceError::WriterClosed);
        }
        let schema = self
            .shared
            .registry
            .get(rec.schema_id)
            .ok_or(TraceError::UnknownSchema(rec.schema_id))?;
        check_payload(schema, &rec.payload).map_err(TraceError::PayloadMismatch)?;
        if !self.shared.enabled[rec.schema_id as usize] {
            self.state.filtered.fetch_add(1, Ordering::Relaxed);
            return Ok(EmitOutcome::Filtered);
        }
        match self.state.queue.push(rec) {
            Ok(()) => {
                self.state.accepted.fetch_add(1, Ordering::Relaxed);
                Ok(EmitOutcome::Written)
            }
            Err(_) => {
                self.state.dropped.fetch_add(1, Ordering::Relaxed);
                Ok(EmitOutcome::Dropped)
            }
        }
    }

    pub fn info(&self) -> StreamInfo {
        self.state.info()
    }
}
