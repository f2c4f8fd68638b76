//! Schema registry, C interposer emission and the in-process dispatch path.

mod dispatch;
mod interposer;
mod registry;

pub use dispatch::{Backend, CompletedCommand, DispatchError, DispatchTable};
pub use interposer::{emit_interposer_source, WRITER_HEADER};
pub use registry::{
    build_schema_registry, function_plan, Capture, DerefRead, EventClass, EventSchema, FieldKind, FieldOrigin,
    FieldSpec, FunctionPlan, ModeMask, Scenario, SchemaRegistry, TracingMode, MARKER_SCHEMA, MAX_CAPTURE_BYTES,
    PROFILING_FIELDS,
};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CodegenError {
    #[error("hybrid scenario needs directions for profiled functions: {}", offenders.join(", "))]
    IncompleteModel { offenders: Vec<String> },
    #[error("schema `{schema}` has two fields named `{field}`")]
    FieldCollision { schema: String, field: String },
    #[error("cannot trace `{function}`: {message}")]
    Unsupported { function: String, message: String },
    #[error("registry fingerprint {registry:#018x} does not match model fingerprint {model:#018x}")]
    FingerprintMismatch { registry: u64, model: u64 },
}
