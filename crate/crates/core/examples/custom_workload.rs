//! A workload written inline in the YAML DSL: two threads, each with its own
//! command list on its own tile, running in parallel.

use hapitrace::codegen::TracingMode;
use hapitrace::mock::{run_untraced, trace_workload, RunOptions, WorkloadSpec};

const WORKLOAD: &str = r#"
name: two-tiles
seed: 7
steps:
  - call: init
  - thread: 0
    steps:
      - { call: mem_alloc, args: { space: device, size: 4096 }, as: buf }
      - { call: cmdlist_create, args: { tile: 0 }, as: cl }
      - call: cmdlist_append_launch_kernel
        args: { list: cl, kernel: fill, groups: [4, 1, 1] }
      - { call: cmdlist_close, args: { list: cl } }
      - { call: cmdlist_execute, args: { list: cl } }
      - { call: mem_free, args: { ptr: buf } }
  - thread: 1
    steps:
      - { call: mem_alloc, args: { space: device, size: 4096 }, as: buf }
      - { call: cmdlist_create, args: { tile: 1 }, as: cl }
      - call: cmdlist_append_launch_kernel
        args: { list: cl, kernel: fill, groups: [8, 1, 1] }
      - { call: cmdlist_close, args: { list: cl } }
      - { call: cmdlist_execute, args: { list: cl } }
      - { call: mem_free, args: { ptr: buf } }
"#;

pub fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = WorkloadSpec::from_yaml(WORKLOAD)?;
    println!("{} static calls", spec.static_call_count()?);

    let plain = run_untraced(&spec, &RunOptions::default())?;
    let tmp = tempfile::tempdir()?;
    let (traced, streams) = trace_workload(&spec, &tmp.path().join("t"), TracingMode::Full, &RunOptions::default())?;
    // Tracing never changes what the runtime does.
    assert_eq!(plain, traced);

    println!(
        "{} threads, {} calls, {} failures",
        traced.threads,
        traced.total_calls(),
        traced.failures.len()
    );
    for (f, n) in &traced.calls {
        println!("  {f:<40} {n}");
    }
    for s in &streams {
        println!("stream {} -> {} events", s.id(), s.event_count);
    }
    Ok(())
}
