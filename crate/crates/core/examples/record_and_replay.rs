//! Writes a handful of events by hand through the trace writer, then reads
//! the directory back and prints every record.

use hapitrace::api_model::mock_model;
use hapitrace::codegen::{build_schema_registry, FieldKind, Scenario};
use hapitrace::sinks::pretty_line;
use hapitrace::trace::{open_trace_writer, StreamId, TraceReader, Value, WriterConfig};

fn zero(kind: FieldKind) -> Value {
    match kind {
        FieldKind::U64 => Value::U64(0),
        FieldKind::I64 => Value::I64(0),
        FieldKind::F64 => Value::F64(0.0),
        FieldKind::Address => Value::Address(0),
        FieldKind::String => Value::String(String::new()),
        FieldKind::Blob => Value::Blob(Vec::new()),
    }
}

pub fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tmp = tempfile::tempdir()?;
    let dir = tmp.path().join("trace");
    let registry = build_schema_registry(&mock_model(), Scenario::Hybrid)?;
    let entry = registry.entry_of("zeMockMemAlloc").expect("in model").clone();
    let exit = registry.exit_of("zeMockMemAlloc").expect("in model").clone();

    let writer = open_trace_writer(&dir, registry, WriterConfig::default())?;
    let stream = writer.acquire_stream(StreamId::new("node0", 42, 42))?;
    for (i, size) in [64u64, 4096, 1 << 20].into_iter().enumerate() {
        let t = 1_000 * i as u64;
        let args: Vec<Value> = entry
            .fields
            .iter()
            .map(|f| match f.name.as_str() {
                "size" => Value::U64(size),
                "pptr" => Value::Address(0x7fff_0000 + 8 * i as u64),
                _ => zero(f.kind),
            })
            .collect();
        stream.emit(entry.id, t, args)?;
        let ret: Vec<Value> = exit
            .fields
            .iter()
            .map(|f| match f.kind {
                FieldKind::Address => Value::Address(0xff00_0000_0000 + (i as u64) * 0x10000),
                k => zero(k),
            })
            .collect();
        stream.emit(exit.id, t + 500, ret)?;
    }
    let infos = writer.finalize()?;
    println!("wrote {} events on {} stream(s)", infos[0].event_count, infos.len());

    let reader = TraceReader::open(&dir)?;
    let id = reader.streams()[0].id();
    for rec in reader.read_stream(0)? {
        let schema = reader.registry().get(rec.schema_id).expect("known schema");
        println!("{}", pretty_line(schema, &id, rec.timestamp_ns, &rec.payload));
    }
    Ok(())
}
