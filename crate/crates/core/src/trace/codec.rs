//! Bit-exact record encoding.
//!
//! ```text
//! record  = schema_id:u32 timestamp_ns:u64 payload_len:u32 payload
//! payload = field*            (schema order)
//! field   = u64 | i64 | f64 | address      (8 bytes, little-endian)
//!         | len:u32 bytes                  (string, blob)
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::codegen::{EventSchema, FieldKind, SchemaRegistry};

/// Stream file magic, `"THPI"` as a big-endian u32; on disk (little-endian) the bytes read `IPHT`.
pub const STREAM_MAGIC: u32 = 0x5448_5049;
pub const FORMAT_VERSION: u32 = 1;
pub const STREAM_HEADER_LEN: usize = 16;
pub const RECORD_HEADER_LEN: usize = 16;

/// One typed payload value.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Value {
    U64(u64),
    I64(i64),
    F64(f64),
    Address(u64),
    String(String),
    Blob(Vec<u8>),
}

// Floats compare bitwise so that decode(encode(v)) == v holds for NaN too.
impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        use Value::*;
        match (self, other) {
            (U64(a), U64(b)) | (Address(a), Address(b)) => a == b,
            (I64(a), I64(b)) => a == b,
            (F64(a), F64(b)) => a.to_bits() == b.to_bits(),
            (String(a), String(b)) => a == b,
            (Blob(a), Blob(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for Value {}

impl Value {
    pub fn kind(&self) -> FieldKind {
        match self {
            Value::U64(_) => FieldKind::U64,
            Value::I64(_) => FieldKind::I64,
            Value::F64(_) => FieldKind::F64,
            Value::Address(_) => FieldKind::Address,
            Value::String(_) => FieldKind::String,
            Value::Blob(_) => FieldKind::Blob,
        }
    }

    /// Integral view: unsigned, signed (reinterpreted) and address values.
    pub fn as_u64(&self) -> Option<u64> {
        match self {
            Value::U64(v) | Value::Address(v) => Some(*v),
            Value::I64(v) => Some(*v as u64),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Value::I64(v) => Some(*v),
            Value::U64(v) | Value::Address(v) => Some(*v as i64),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::F64(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::String(s) => Some(s),
            _ => None,
        }
    }

    pub fn encoded_len(&self) -> usize {
        match self {
            Value::String(s) => 4 + s.len(),
            Value::Blob(b) => 4 + b.len(),
            _ => 8,
        }
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        match self {
            Value::U64(v) | Value::Address(v) => out.extend_from_slice(&v.to_le_bytes()),
            Value::I64(v) => out.extend_from_slice(&v.to_le_bytes()),
            Value::F64(v) => out.extend_from_slice(&v.to_bits().to_le_bytes()),
            Value::String(s) => {
                out.extend_from_slice(&(s.len() as u32).to_le_bytes());
                out.extend_from_slice(s.as_bytes());
            }
            Value::Blob(b) => {
                out.extend_from_slice(&(b.len() as u32).to_le_bytes());
                out.extend_from_slice(b);
            }
        }
    }
}

impl fmt::Display for Value {
    /// Pretty-print rendering of a single value.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::U64(v) => write!(f, "{v}"),
            Value::I64(v) => write!(f, "{v}"),
            Value::F64(v) => write!(f, "{v:?}"),
            Value::Address(v) => write!(f, "0x{v:016x}"),
            Value::String(s) => f.write_str(&serde_json::to_string(s).expect("string serializes")),
            Value::Blob(b) => {
                f.write_str("[ ")?;
                for (i, byte) in b.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{byte}")?;
                }
                f.write_str(" ]")
            }
        }
    }
}

/// One timestamped occurrence of a schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub schema_id: u32,
    pub timestamp_ns: u64,
    pub payload: Vec<Value>,
}

impl EventRecord {
    pub fn new(schema_id: u32, timestamp_ns: u64, payload: Vec<Value>) -> Self {
        EventRecord {
            schema_id,
            timestamp_ns,
            payload,
        }
    }

    pub fn encoded_len(&self) -> usize {
        RECORD_HEADER_LEN + self.payload.iter().map(Value::encoded_len).sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CodecError {
    #[error("unknown schema id {0}")]
    UnknownSchema(u32),
    #[error("schema `{schema}` expects {expected} fields, got {got}")]
    Arity {
        schema: String,
        expected: usize,
        got: usize,
    },
    #[error("field `{field}` of `{schema}` expects {expected:?}, got {got:?}")]
    Kind {
        schema: String,
        field: String,
        expected: FieldKind,
        got: FieldKind,
    },
    #[error("{0}")]
    Corrupt(String),
}

/// Checks payload arity and kinds against a schema.
pub fn check_payload(schema: &EventSchema, payload: &[Value]) -> Result<(), CodecError> {
    if schema.fields.len() != payload.len() {
        return Err(CodecError::Arity {
            schema: schema.name.clone(),
            expected: schema.fields.len(),
            got: payload.len(),
        });
    }
    for (spec, v) in schema.fields.iter().zip(payload) {
        if spec.kind != v.kind() {
            return Err(CodecError::Kind {
                schema: schema.name.clone(),
                field: spec.name.clone(),
                expected: spec.kind,
                got: v.kind(),
            });
        }
    }
    Ok(())
}

/// Appends the encoded record to `out`. The payload is assumed checked.
pub fn encode_record(rec: &EventRecord, out: &mut Vec<u8>) {
    let payload_len: usize = rec.payload.iter().map(Value::encoded_len).sum();
    out.reserve(RECORD_HEADER_LEN + payload_len);
    out.extend_from_slice(&rec.schema_id.to_le_bytes());
    out.extend_from_slice(&rec.timestamp_ns.to_le_bytes());
    out.extend_from_slice(&(payload_len as u32).to_le_bytes());
    for v in &rec.payload {
        v.encode_into(out);
    }
}

pub fn encode_stream_header(out: &mut Vec<u8>) {
    out.extend_from_slice(&STREAM_MAGIC.to_le_bytes());
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&0u64.to_le_bytes());
}

pub fn check_stream_header(bytes: &[u8]) -> Result<(), CodecError> {
    if bytes.len() < STREAM_HEADER_LEN {
        return Err(CodecError::Corrupt("truncated stream header".into()));
    }
    let magic = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
    if magic != STREAM_MAGIC {
        return Err(CodecError::Corrupt(format!("bad magic 0x{magic:08x}")));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(CodecError::Corrupt(format!("unsupported format version {version}")));
    }
    Ok(())
}

/// Splits a record header into (schema id, timestamp, payload length).
pub fn decode_record_header(bytes: &[u8; RECORD_HEADER_LEN]) -> (u32, u64, u32) {
    (
        u32::from_le_bytes(bytes[0..4].try_into().unwrap()),
        u64::from_le_bytes(bytes[4..12].try_into().unwrap()),
        u32::from_le_bytes(bytes[12..16].try_into().unwrap()),
    )
}

/// Decodes a payload against its schema; the payload must be consumed exactly.
pub fn decode_payload(schema: &EventSchema, bytes: &[u8]) -> Result<Vec<Value>, CodecError> {
    let mut pos = 0usize;
    let mut take = |n: usize, field: &str| -> Result<&[u8], CodecError> {
        if bytes.len() - pos < n {
            return Err(CodecError::Corrupt(format!(
                "payload of `{}` ends inside field `{field}`",
                schema.name
            )));
        }
        let s = &bytes[pos..pos + n];
        pos += n;
        Ok(s)
    };
    let mut values = Vec::with_capacity(schema.fields.len());
    for spec in &schema.fields {
        let v = match spec.kind {
            FieldKind::U64 => Value::U64(u64::from_le_bytes(take(8, &spec.name)?.try_into().unwrap())),
            FieldKind::Address => Value::Address(u64::from_le_bytes(take(8, &spec.name)?.try_into().unwrap())),
            FieldKind::I64 => Value::I64(i64::from_le_bytes(take(8, &spec.name)?.try_into().unwrap())),
            FieldKind::F64 => Value::F64(f64::from_bits(u64::from_le_bytes(
                take(8, &spec.name)?.try_into().unwrap(),
            ))),
            FieldKind::String | FieldKind::Blob => {
                let len = u32::from_le_bytes(take(4, &spec.name)?.try_into().unwrap()) as usize;
                let raw = take(len, &spec.name)?;
                if spec.kind == FieldKind::Blob {
                    Value::Blob(raw.to_vec())
                } else {
                    Value::String(String::from_utf8_lossy(raw).into_owned())
                }
            }
        };
        values.push(v);
    }
    if pos != bytes.len() {
        return Err(CodecError::Corrupt(format!(
            "payload of `{}` has {} trailing bytes",
            schema.name,
            bytes.len() - pos
        )));
    }
    Ok(values)
}

/// Decodes one record from the front of `bytes`, returning it and its length.
pub fn decode_record(registry: &SchemaRegistry, bytes: &[u8]) -> Result<(EventRecord, usize), CodecError> {
    if bytes.len() < RECORD_HEADER_LEN {
        return Err(CodecError::Corrupt("truncated record header".into()));
    }
    let (schema_id, timestamp_ns, len) = decode_record_header(bytes[..RECORD_HEADER_LEN].try_into().unwrap());
    let schema = registry.get(schema_id).ok_or(CodecError::UnknownSchema(schema_id))?;
    let end = RECORD_HEADER_LEN + len as usize;
    if bytes.len() < end {
        return Err(CodecError::Corrupt(format!(
            "record declares {len} payload bytes, {} available",
            bytes.len() - RECORD_HEADER_LEN
        )));
    }
    let payload = decode_payload(schema, &bytes[RECORD_HEADER_LEN..end])?;
    Ok((
        EventRecord {
            schema_id,
            timestamp_ns,
            payload,
        },
        end,
    ))
}
