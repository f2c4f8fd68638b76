//! Measures wall-clock tracing overhead for every mode, with and without
//! telemetry sampling, relative to an untraced run.

use hapitrace::cli::{run_bench, BenchConfig};
use hapitrace::codegen::TracingMode;
use hapitrace::mock::WorkloadSpec;

pub fn main() -> Result<(), Box<dyn std::error::Error>> {
    let reps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let spec = WorkloadSpec::resolve("w1")?;
    let configs: Vec<BenchConfig> = [false, true]
        .into_iter()
        .flat_map(|sample| TracingMode::ALL.map(|mode| BenchConfig { mode, sample }))
        .collect();
    let tmp = tempfile::tempdir()?;
    let report = run_bench(&spec, &configs, reps, 1_000_000, tmp.path())?;
    print!("{}", report.render());

    let events: Vec<u64> = report.rows.iter().take(3).map(|r| r.events).collect();
    println!(
        "\nevents minimal <= default <= full: {}",
        events.windows(2).all(|w| w[0] <= w[1])
    );
    Ok(())
}
