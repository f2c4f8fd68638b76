//! Simulates an 8-rank job in aggregate-only mode: every rank's trace is
//! reduced to a tally file and deleted, node masters merge groups of four,
//! and the global master merges the nodes.

use hapitrace::aggregate::{aggregate_only_run, read_tally, AggregateOptions};
use hapitrace::mock::WorkloadSpec;

pub fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tmp = tempfile::tempdir()?;
    let spec = WorkloadSpec::resolve("w1")?;
    let options = AggregateOptions {
        ranks: 8,
        node_size: 4,
        ..AggregateOptions::default()
    };
    let outcome = aggregate_only_run(&spec, tmp.path(), &options)?;

    let mut left: Vec<String> = std::fs::read_dir(tmp.path())?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect::<Result<_, _>>()?;
    left.sort();
    println!("scratch holds: {}", left.join(" "));

    let node0 = read_tally(&outcome.node_files[0])?;
    println!("node0 covers {} processes", node0.processes.len());
    assert_eq!(outcome.composite, outcome.flat);
    println!("hierarchical merge equals flat merge\n");
    print!("{}", outcome.composite.render());
    Ok(())
}
