//! Built-in analysis sinks: pretty text, tally summary, timeline export and
//! post-mortem validation.

mod pretty;
mod tally;
mod timeline;
mod validator;

pub use pretty::{format_timestamp, pretty_line, PrettySink};
pub use tally::{backend_tag, format_duration, FingerprintMismatch, Section, TallyReport, TallyRow, TallySink};
pub use timeline::{check_object, sample_object, span_object, TimelineSink, DEVICE_TID_BASE, REQUIRED_KEYS};
pub use validator::{Rule, ValidationFinding, ValidatorSink};
