//! Multi-rank tally aggregation.
//!
//! Each rank's trace is reduced to a `*.tally.json` file and discarded.
//! Per-node local masters merge their ranks' reports, and a global master
//! merges the node reports into the composite profile.

use std::fs;
use std::path::{Path, PathBuf};

use crate::codegen::{Scenario, TracingMode};
use crate::mock::{trace_workload_in, RunOptions, WorkloadError, WorkloadSpec};
use crate::pipeline::{run_pipeline, PipelineError, SinkOutput};
use crate::sinks::{FingerprintMismatch, TallyReport, TallySink};
use crate::trace::TraceReader;

/// Ranks per simulated node.
pub const DEFAULT_NODE_SIZE: usize = 4;
pub const TALLY_SUFFIX: &str = ".tally.json";

#[derive(Debug, thiserror::Error)]
pub enum AggregateError {
    #[error("report {index}: {source}")]
    Fingerprint {
        index: usize,
        #[source]
        source: FingerprintMismatch,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} is not a tally report: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("at least one rank is required")]
    NoRanks,
    #[error("node size must be positive")]
    ZeroNodeSize,
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> AggregateError + '_ {
    move |source| AggregateError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Flat merge; an empty list yields the empty report.
pub fn merge_tallies(reports: &[TallyReport]) -> Result<TallyReport, AggregateError> {
    let mut out = TallyReport::default();
    for (index, r) in reports.iter().enumerate() {
        out.merge(r)
            .map_err(|source| AggregateError::Fingerprint { index, source })?;
    }
    Ok(out)
}

/// Two-level merge: groups of `node_size` consecutive reports first, then the groups.
pub fn merge_hierarchical(reports: &[TallyReport], node_size: usize) -> Result<TallyReport, AggregateError> {
    if node_size == 0 {
        return Err(AggregateError::ZeroNodeSize);
    }
    let nodes = reports
        .chunks(node_size)
        .map(merge_tallies)
        .collect::<Result<Vec<_>, _>>()?;
    merge_tallies(&nodes)
}

pub fn write_tally(path: &Path, report: &TallyReport) -> Result<(), AggregateError> {
    fs::write(path, report.to_json()).map_err(io(path))
}

pub fn read_tally(path: &Path) -> Result<TallyReport, AggregateError> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    TallyReport::from_json(&text).map_err(|source| AggregateError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Tally of a finalized trace directory.
pub fn tally_trace(dir: &Path) -> Result<TallyReport, PipelineError> {
    let reader = TraceReader::open(dir)?;
    let mut sink = TallySink::new();
    let report = run_pipeline(&reader, &mut [&mut sink])?;
    match report.outputs.into_iter().next() {
        Some((_, SinkOutput::Tally(t))) => Ok(t),
        _ => unreachable!("tally sink yields a tally"),
    }
}

#[derive(Debug, Clone)]
pub struct AggregateOptions {
    pub ranks: usize,
    pub node_size: usize,
    pub mode: TracingMode,
    pub scenario: Scenario,
    /// Per-rank template; rank `r` runs as `pid + r`. When the ranks span
    /// more than one node, rank `r` runs on host `node{r / node_size}`.
    pub run: RunOptions,
}

impl Default for AggregateOptions {
    fn default() -> Self {
        AggregateOptions {
            ranks: 1,
            node_size: DEFAULT_NODE_SIZE,
            mode: TracingMode::Default,
            scenario: Scenario::Hybrid,
            run: RunOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateOutcome {
    /// Hierarchical merge result.
    pub composite: TallyReport,
    /// Flat merge of the same per-rank reports.
    pub flat: TallyReport,
    pub rank_files: Vec<PathBuf>,
    pub node_files: Vec<PathBuf>,
}

/// Runs `spec` once per rank, keeping only per-rank tallies in `scratch`.
pub fn aggregate_only_run(
    spec: &WorkloadSpec,
    scratch: &Path,
    options: &AggregateOptions,
) -> Result<AggregateOutcome, AggregateError> {
    if options.ranks == 0 {
        return Err(AggregateError::NoRanks);
    }
    if options.node_size == 0 {
        return Err(AggregateError::ZeroNodeSize);
    }
    fs::create_dir_all(scratch).map_err(io(scratch))?;
    let mut reports = Vec::with_capacity(options.ranks);
    let mut rank_files = Vec::with_capacity(options.ranks);
    for r in 0..options.ranks {
        let dir = scratch.join(format!("rank{r}.trace"));
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(io(&dir))?;
        }
        let hostname = if options.ranks > options.node_size {
            Some(format!("node{}", r / options.node_size))
        } else {
            options.run.hostname.clone()
        };
        let run = RunOptions {
            pid: options.run.pid + r as u64,
            hostname,
            ..options.run.clone()
        };
        trace_workload_in(spec, &dir, options.mode, options.scenario, &run)?;
        let report = tally_trace(&dir)?;
        fs::remove_dir_all(&dir).map_err(io(&dir))?;
        let file = scratch.join(format!("rank{r}{TALLY_SUFFIX}"));
        write_tally(&file, &report)?;
        reports.push(report);
        rank_files.push(file);
    }
    // Local masters read their ranks' files back, as a remote master would.
    let mut node_files = Vec::new();
    let mut nodes = Vec::new();
    for (n, files) in rank_files.chunks(options.node_size).enumerate() {
        let local = files.iter().map(|f| read_tally(f)).collect::<Result<Vec<_>, _>>()?;
        let merged = merge_tallies(&local)?;
        let file = scratch.join(format!("node{n}{TALLY_SUFFIX}"));
        write_tally(&file, &merged)?;
        nodes.push(merged);
        node_files.push(file);
    }
    Ok(AggregateOutcome {
        composite: merge_tallies(&nodes)?,
        flat: merge_tallies(&reports)?,
        rank_files,
        node_files,
    })
}
