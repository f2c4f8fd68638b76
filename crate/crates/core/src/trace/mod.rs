//! Binary trace format, the non-blocking writer and the reader.
//!
//! A trace is a directory holding `metadata.json` and one
//! `stream_<pid>_<tid>.bin` file per emitting thread.

mod clock;
mod codec;
mod metadata;
mod reader;
mod writer;

use std::path::PathBuf;

pub use clock::{monotonic_now_ns, ClockKind};
pub use codec::{
    check_payload, check_stream_header, decode_payload, decode_record, encode_record, encode_stream_header, CodecError,
    EventRecord, Value, FORMAT_VERSION, RECORD_HEADER_LEN, STREAM_HEADER_LEN, STREAM_MAGIC,
};
pub use metadata::{StreamId, StreamInfo, TraceMetadata, METADATA_FILE};
pub use reader::{StreamCursor, TraceReader};
pub use writer::{
    default_buffer_capacity, open_trace_writer, DrainPolicy, EmitOutcome, StreamHandle, TraceWriter, WriterConfig,
    BUFFER_CAP_ENV, DEFAULT_BUFFER_CAPACITY,
};

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("trace directory {0} exists and is not empty")]
    DirectoryNotEmpty(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown schema id {0}")]
    UnknownSchema(u32),
    #[error("payload does not match schema: {0}")]
    PayloadMismatch(CodecError),
    #[error("writer is closed")]
    WriterClosed,
    #[error("corrupt record in {stream} at byte {offset}: {message}")]
    Corrupt {
        stream: String,
        offset: u64,
        message: String,
    },
    #[error("decode error in {stream} at byte {offset}: unknown schema id {schema_id}")]
    UnknownSchemaInFile {
        stream: String,
        offset: u64,
        schema_id: u32,
    },
    #[error("invalid metadata in {path}: {message}")]
    Metadata { path: PathBuf, message: String },
    #[error("trace in {0} was not finalized")]
    Incomplete(PathBuf),
}

impl TraceError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TraceError::Io {
            path: path.into(),
            source,
        }
    }
}
