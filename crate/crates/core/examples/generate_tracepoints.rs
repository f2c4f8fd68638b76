//! Builds the API model from a C header plus meta-parameters, derives the
//! tracepoint registry for both scenarios, and emits the C interposer.
//!
//! ```text
//! cargo run --example generate_tracepoints
//! ```

use hapitrace::api_model::{apply_meta_params, parse_header_decls, MetaParams};
use hapitrace::codegen::{build_schema_registry, emit_interposer_source, Scenario, TracingMode};

const HEADER: &str = include_str!("../data/ze_mock.h");
const META: &str = include_str!("../data/ze_mock.meta.yaml");

pub fn main() -> Result<(), Box<dyn std::error::Error>> {
    let header_only = parse_header_decls(HEADER)?;
    let model = apply_meta_params(header_only.clone(), &MetaParams::from_yaml(META)?)?;
    println!(
        "{} {}: {} functions",
        model.api_name,
        model.version,
        model.functions.len()
    );

    for (scenario, m) in [(Scenario::Automatic, &header_only), (Scenario::Hybrid, &model)] {
        let registry = build_schema_registry(m, scenario)?;
        println!(
            "\n{scenario:?}: {} schemas, fingerprint {:#018x}",
            registry.len(),
            registry.fingerprint
        );
        for mode in TracingMode::ALL {
            println!("  {mode:>8}: {} enabled", registry.enabled_names(mode).len());
        }
        let copy = registry
            .entry_of("zeMockCommandListAppendMemoryCopy")
            .expect("in model");
        let fields: Vec<&str> = copy.fields.iter().map(|f| f.name.as_str()).collect();
        println!("  {} [{}]", copy.name, fields.join(", "));
        if let Some(p) = registry.profiling_of("zeMockCommandListAppendMemoryCopy") {
            println!("  {} has {} fields", p.name, p.fields.len());
        }
    }

    let registry = build_schema_registry(&model, Scenario::Hybrid)?;
    let source = emit_interposer_source(&model, &registry)?;
    let wrappers = source.matches("dlsym(RTLD_NEXT").count();
    println!(
        "\ninterposer: {} lines, {wrappers} wrapped symbols",
        source.lines().count()
    );
    Ok(())
}
