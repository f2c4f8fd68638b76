use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClockKind, TraceError, FORMAT_VERSION};
use crate::api_model::ApiModel;
use crate::codegen::{SchemaRegistry, TracingMode};

pub const METADATA_FILE: &str = "metadata.json";

/// Identity of an emitting thread.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StreamId {
    pub hostname: String,
    pub pid: u64,
    pub tid: u64,
}

impl StreamId {
    pub fn new(hostname: impl Into<String>, pid: u64, tid: u64) -> Self {
        StreamId {
            hostname: hostname.into(),
            pid,
            tid,
        }
    }

    pub fn file_name(&self) -> String {
        format!("stream_{}_{}.bin", self.pid, self.tid)
    }
}

impl fmt::Display for StreamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.hostname, self.pid, self.tid)
    }
}

/// Per-stream accounting written to the stream index at finalize.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamInfo {
    pub hostname: String,
    pub pid: u64,
    pub tid: u64,
    pub event_count: u64,
    pub dropped_count: u64,
    /// Emissions rejected by the tracing mode; not drops.
    #[serde(default)]
    pub filtered_count: u64,
}

impl StreamInfo {
    pub fn id(&self) -> StreamId {
        StreamId::new(self.hostname.clone(), self.pid, self.tid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMetadata {
    pub format_version: u32,
    pub mode: TracingMode,
    pub clock: ClockKind,
    pub complete: bool,
    pub registry: SchemaRegistry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ApiModel>,
    #[serde(default)]
    pub streams: Vec<StreamInfo>,
}

impl TraceMetadata {
    pub fn new(registry: SchemaRegistry, mode: TracingMode, clock: ClockKind, model: Option<ApiModel>) -> Self {
        TraceMetadata {
            format_version: FORMAT_VERSION,
            mode,
            clock,
            complete: false,
            registry,
            model,
            streams: Vec::new(),
        }
    }

    pub fn load(dir: &Path) -> Result<Self, TraceError> {
        let path = dir.join(METADATA_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| TraceError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| TraceError::Metadata {
            path,
            message: e.to_string(),
        })
    }

    pub fn store(&self, dir: &Path) -> Result<(), TraceError> {
        let path = dir.join(METADATA_FILE);
        let mut text = serde_json::to_string_pretty(self).expect("metadata serializes");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| TraceError::io(&path, e))
    }
}
