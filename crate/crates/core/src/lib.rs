//! Model-driven API tracing.
//!
//! An [`api_model::ApiModel`] describes a traced API. [`codegen`] turns it into
//! a schema registry and a C interposer. Calls then flow through the
//! non-blocking [`trace`] writer into per-thread binary streams. The
//! [`pipeline`] muxes those streams by timestamp, pairs entries with exits,
//! and feeds every [`sinks`] view in one pass. [`aggregate`] merges tallies
//! across ranks.
//!
//! [`mock`] provides a simulated GPU runtime and a workload DSL, so the whole
//! path runs without hardware. [`sampler`] adds device telemetry.
//!
//! ```no_run
//! use hapitrace::codegen::TracingMode;
//! use hapitrace::mock::{trace_workload, RunOptions, WorkloadSpec};
//! use hapitrace::pipeline::{run_pipeline, SinkOutput};
//! use hapitrace::sinks::TallySink;
//! use hapitrace::trace::TraceReader;
//!
//! let spec = WorkloadSpec::resolve("w1")?;
//! trace_workload(&spec, std::path::Path::new("out"), TracingMode::Default, &RunOptions::default())?;
//! let mut tally = TallySink::new();
//! let report = run_pipeline(&TraceReader::open("out")?, &mut [&mut tally])?;
//! if let Some(SinkOutput::Tally(t)) = report.output("tally") {
//!     print!("{}", t.render());
//! }
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod aggregate;
pub mod api_model;
pub mod cli;
pub mod codegen;
pub mod mock;
pub mod pipeline;
pub mod sampler;
pub mod sinks;
pub mod trace;
