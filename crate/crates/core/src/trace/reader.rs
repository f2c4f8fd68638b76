use std::fs::File;
use std::io::{BufReader, ErrorKind, Read};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::codec::{check_stream_header, decode_payload, decode_record_header, RECORD_HEADER_LEN, STREAM_HEADER_LEN};
use super::{EventRecord, StreamId, StreamInfo, TraceError, TraceMetadata};
use crate::codegen::SchemaRegistry;

/// Read access to a finalized trace directory.
pub struct TraceReader {
    dir: PathBuf,
    metadata: TraceMetadata,
    registry: Arc<SchemaRegistry>,
}

impl TraceReader {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, TraceError> {
        let dir = dir.as_ref().to_path_buf();
        let metadata = TraceMetadata::load(&dir)?;
        if !metadata.complete {
            return Err(TraceError::Incomplete(dir));
        }
        let registry = Arc::new(metadata.registry.clone());
        Ok(TraceReader {
            dir,
            metadata,
            registry,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn metadata(&self) -> &TraceMetadata {
        &self.metadata
    }

    pub fn registry(&self) -> &Arc<SchemaRegistry> {
        &self.registry
    }

    pub fn streams(&self) -> &[StreamInfo] {
        &self.metadata.streams
    }

    /// Opens a cursor over the `index`-th stream of the index.
    pub fn cursor(&self, index: usize) -> Result<StreamCursor, TraceError> {
        let info = &self.metadata.streams[index];
        StreamCursor::open(&self.dir, info.id(), Arc::clone(&self.registry))
    }

    pub fn cursors(&self) -> Result<Vec<StreamCursor>, TraceError> {
        (0..self.streams().len()).map(|i| self.cursor(i)).collect()
    }

    /// Decodes one whole stream into memory.
    pub fn read_stream(&self, index: usize) -> Result<Vec<EventRecord>, TraceError> {
        self.cursor(index)?.collect()
    }

    pub fn total_records(&self) -> Result<u64, TraceError> {
        let mut n = 0;
        for c in self.cursors()? {
            for r in c {
                r?;
                n += 1;
            }
        }
        Ok(n)
    }
}

/// Sequential decoder over one stream file.
pub struct StreamCursor {
    id: StreamId,
    name: String,
    input: BufReader<File>,
    registry: Arc<SchemaRegistry>,
    offset: u64,
    payload: Vec<u8>,
    failed: bool,
}

impl StreamCursor {
    pub fn open(dir: &Path, id: StreamId, registry: Arc<SchemaRegistry>) -> Result<Self, TraceError> {
        let name = id.file_name();
        let path = dir.join(&name);
        let file = File::open(&path).map_err(|e| TraceError::io(&path, e))?;
        let mut input = BufReader::with_capacity(1 << 16, file);
        let mut header = [0u8; STREAM_HEADER_LEN];
        let got = read_full(&mut input, &mut header).map_err(|e| TraceError::io(&path, e))?;
        check_stream_header(&header[..got]).map_err(|e| TraceError::Corrupt {
            stream: name.clone(),
            offset: 0,
            message: e.to_string(),
        })?;
        Ok(StreamCursor {
            id,
            name,
            input,
            registry,
            offset: STREAM_HEADER_LEN as u64,
            payload: Vec::new(),
            failed: false,
        })
    }

    pub fn id(&self) -> &StreamId {
        &self.id
    }

    /// Byte offset of the next record.
    pub fn offset(&self) -> u64 {
        self.offset
    }

    fn corrupt(&mut self, offset: u64, message: impl Into<String>) -> TraceError {
        self.failed = true;
        TraceError::Corrupt {
            stream: self.name.clone(),
            offset,
            message: message.into(),
        }
    }

    /// Next record in file order, or `None` at the end of the stream.
    pub fn next_event(&mut self) -> Result<Option<EventRecord>, TraceError> {
        if self.failed {
            return Ok(None);
        }
        let start = self.offset;
        let mut header = [0u8; RECORD_HEADER_LEN];
        let got = read_full(&mut self.input, &mut header).map_err(|e| TraceError::io(&self.name, e))?;
        if got == 0 {
            return Ok(None);
        }
        if got < RECORD_HEADER_LEN {
            return Err(self.corrupt(
                start,
                format!("truncated record header ({got} of {RECORD_HEADER_LEN} bytes)"),
            ));
        }
        let (schema_id, timestamp_ns, len) = decode_record_header(&header);
        let Some(schema) = self.registry.get(schema_id) else {
            self.failed = true;
            return Err(TraceError::UnknownSchemaInFile {
                stream: self.name.clone(),
                offset: start,
                schema_id,
            });
        };
        self.payload.resize(len as usize, 0);
        let got = read_full(&mut self.input, &mut self.payload).map_err(|e| TraceError::io(&self.name, e))?;
        if got < len as usize {
            return Err(self.corrupt(start, format!("truncated payload ({got} of {len} bytes)")));
        }
        let payload = match decode_payload(schema, &self.payload) {
            Ok(p) => p,
            Err(e) => return Err(self.corrupt(start, e.to_string())),
        };
        self.offset = start + RECORD_HEADER_LEN as u64 + len as u64;
        Ok(Some(EventRecord {
            schema_id,
            timestamp_ns,
            payload,
        }))
    }
}

impl Iterator for StreamCursor {
    type Item = Result<EventRecord, TraceError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_event().transpose()
    }
}

/// Reads until `buf` is full or EOF; returns the number of bytes read.
fn read_full(r: &mut impl Read, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(n)
}
