//! Command-line front end: `trace`, `analyze`, `bench`, `merge`, `codegen`.
//!
//! [`run`] parses arguments and writes to the given output handles, so the
//! binary and the tests drive exactly the same code.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use crate::aggregate::{
    aggregate_only_run, merge_hierarchical, merge_tallies, read_tally, tally_trace, write_tally, AggregateError,
    AggregateOptions, DEFAULT_NODE_SIZE,
};
use crate::api_model::{
    apply_meta_params, mock_model, mock_model_unannotated, parse_header_decls, ApiModel, MetaParams, ModelError,
};
use crate::codegen::{
    build_schema_registry, emit_interposer_source, CodegenError, Scenario, TracingMode, WRITER_HEADER,
};
use crate::mock::{run_untraced, run_workload, trace_workload_in, Injection, RunOptions, WorkloadError, WorkloadSpec};
use crate::pipeline::{run_pipeline, PipelineError, Sink, SinkOutput};
use crate::sinks::{PrettySink, TallySink, TimelineSink, ValidatorSink};
use crate::trace::{open_trace_writer, ClockKind, TraceError, TraceReader, WriterConfig};

const DEFAULT_SAMPLE_PERIOD_MS: u64 = 50;

#[derive(Debug, Parser)]
#[command(
    name = "hapitrace",
    version,
    about = "Model-driven API tracing over a simulated GPU runtime"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a workload under tracing and print its tally.
    Trace(TraceArgs),
    /// Run sinks over a finalized trace directory.
    Analyze(AnalyzeArgs),
    /// Measure tracing overhead against an untraced baseline.
    Bench(BenchArgs),
    /// Merge `*.tally.json` reports.
    Merge(MergeArgs),
    /// Emit the C interposer, writer header and registry for a model.
    Codegen(CodegenArgs),
}

#[derive(Debug, Args)]
struct SampleArgs {
    /// Record device telemetry on a dedicated stream.
    #[arg(long)]
    sample: bool,
    /// Sampling period in milliseconds; implies --sample.
    #[arg(long, value_name = "MS", value_parser = clap::value_parser!(u64).range(1..))]
    sample_period: Option<u64>,
}

impl SampleArgs {
    fn period_ns(&self) -> Option<u64> {
        if self.sample || self.sample_period.is_some() {
            Some(self.sample_period.unwrap_or(DEFAULT_SAMPLE_PERIOD_MS) * 1_000_000)
        } else {
            None
        }
    }
}

#[derive(Debug, Args)]
struct TraceArgs {
    #[arg(long, default_value = "default")]
    mode: TracingMode,
    #[command(flatten)]
    sample: SampleArgs,
    #[arg(long, default_value = "hybrid")]
    scenario: Scenario,
    /// Comma-separated defects to inject.
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    inject: Vec<Injection>,
    /// Keep only per-rank tallies and the merged `tally.json`.
    #[arg(long)]
    aggregate_only: bool,
    /// Simulated ranks; requires --aggregate-only.
    #[arg(long, default_value_t = 1, requires = "aggregate_only", value_parser = clap::value_parser!(u64).range(1..))]
    ranks: u64,
    /// Ranks per node for the two-level merge.
    #[arg(long, default_value_t = DEFAULT_NODE_SIZE as u64, value_parser = clap::value_parser!(u64).range(1..))]
    node_size: u64,
    /// Output directory; defaults to `hapitrace-<workload>-<unix seconds>`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides the workload seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Timestamps from the monotonic wall clock instead of the virtual clock.
    #[arg(long)]
    wall_clock: bool,
    /// Do not print the tally.
    #[arg(long, short)]
    quiet: bool,
    /// Workload YAML path or bundled name (w1, w2, w3).
    workload: String,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    dir: PathBuf,
    /// One line per event.
    #[arg(long)]
    pretty: bool,
    /// Summary table (the default when no view is chosen).
    #[arg(long)]
    tally: bool,
    /// Print the tally as JSON instead of text.
    #[arg(long, requires = "tally")]
    json: bool,
    /// Chrome trace-event JSON output file.
    #[arg(long, value_name = "OUT")]
    timeline: Option<PathBuf>,
    /// API-usage checks; exit status 1 when anything is found.
    #[arg(long)]
    validate: bool,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Tracing modes to measure; all three when omitted.
    #[arg(long)]
    mode: Vec<TracingMode>,
    #[command(flatten)]
    sample: SampleArgs,
    /// Repetitions per configuration.
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    reps: u64,
    workload: String,
}

#[derive(Debug, Args)]
struct MergeArgs {
    #[arg(required = true)]
    files: Vec<PathBuf>,
    /// Write the merged report here as JSON.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Merge in groups of this many reports first.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    node_size: Option<u64>,
}

#[derive(Debug, Args)]
struct CodegenArgs {
    /// C header to parse; the bundled mock model when omitted.
    #[arg(long, requires = "meta")]
    header: Option<PathBuf>,
    /// Meta-parameter YAML applied to the header model.
    #[arg(long)]
    meta: Option<PathBuf>,
    #[arg(long, default_value = "hybrid")]
    scenario: Scenario,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Codegen(#[from] CodegenError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Parses `args` (including the program name) and runs the command.
///
/// Returns the process exit status: 0 on success, 1 on harness errors or
/// validation findings, 2 on usage errors.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Trace(a) => cmd_trace(a, out, err),
        Command::Analyze(a) => cmd_analyze(a, out, err),
        Command::Bench(a) => cmd_bench(a, out),
        Command::Merge(a) => cmd_merge(a, out),
        Command::Codegen(a) => cmd_codegen(a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes()).map_err(io(Path::new("<stdout>")))
}

fn default_out(workload: &str) -> PathBuf {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    PathBuf::from(format!("hapitrace-{workload}-{secs}"))
}

fn cmd_trace(a: TraceArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, CliError> {
    let spec = WorkloadSpec::resolve(&a.workload)?;
    let dir = a.out.clone().unwrap_or_else(|| default_out(&spec.name));
    let run = RunOptions {
        injections: a.inject.clone(),
        seed: a.seed,
        sample_period_ns: a.sample.period_ns(),
        wall_clock: a.wall_clock,
        ..RunOptions::default()
    };
    if a.aggregate_only {
        let options = AggregateOptions {
            ranks: a.ranks as usize,
            node_size: a.node_size as usize,
            mode: a.mode,
            scenario: a.scenario,
            run,
        };
        let outcome = aggregate_only_run(&spec, &dir.join("ranks"), &options)?;
        let path = dir.join("tally.json");
        write_tally(&path, &outcome.composite)?;
        if !a.quiet {
            emit(out, &outcome.composite.render())?;
        }
        let _ = writeln!(err, "tally written to {}", path.display());
        return Ok(0);
    }
    let (summary, streams) = trace_workload_in(&spec, &dir, a.mode, a.scenario, &run)?;
    if !a.quiet {
        emit(out, &tally_trace(&dir)?.render())?;
    }
    let events: u64 = streams.iter().map(|s| s.event_count).sum();
    let dropped: u64 = streams.iter().map(|s| s.dropped_count).sum();
    let _ = writeln!(
        err,
        "trace written to {} ({} streams, {events} events, {dropped} dropped, {} API calls, {} failed)",
        dir.display(),
        streams.len(),
        summary.total_calls(),
        summary.failures.len()
    );
    Ok(0)
}

fn cmd_analyze(a: AnalyzeArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, CliError> {
    let reader = TraceReader::open(&a.dir)?;
    let want_tally = a.tally || !(a.pretty || a.timeline.is_some() || a.validate);
    let mut pretty = a.pretty.then(PrettySink::buffered);
    let mut tally = want_tally.then(TallySink::new);
    let mut timeline = a.timeline.as_ref().map(TimelineSink::new);
    let mut validator = a.validate.then(|| ValidatorSink::new(None));
    let mut sinks: Vec<&mut dyn Sink> = Vec::new();
    if let Some(s) = pretty.as_mut() {
        sinks.push(s);
    }
    if let Some(s) = tally.as_mut() {
        sinks.push(s);
    }
    if let Some(s) = timeline.as_mut() {
        sinks.push(s);
    }
    if let Some(s) = validator.as_mut() {
        sinks.push(s);
    }
    let report = run_pipeline(&reader, &mut sinks)?;
    let mut code = 0;
    for (name, output) in &report.outputs {
        match output {
            SinkOutput::Text(text) => emit(out, text)?,
            SinkOutput::Tally(t) if a.json => emit(out, &format!("{}\n", t.to_json()))?,
            SinkOutput::Tally(t) => emit(out, &t.render())?,
            SinkOutput::Timeline { path, objects } => {
                let shown = path.as_deref().unwrap_or(Path::new("-")).display().to_string();
                let _ = writeln!(err, "timeline: {objects} objects written to {shown}");
            }
            SinkOutput::Findings(findings) => {
                for f in findings {
                    emit(out, &format!("{f}\n"))?;
                }
                let _ = writeln!(err, "{name}: {} finding(s)", findings.len());
                if !findings.is_empty() {
                    code = 1;
                }
            }
            SinkOutput::Json(v) => emit(out, &format!("{v}\n"))?,
            SinkOutput::None => {}
        }
    }
    Ok(code)
}

/// One traced configuration of a benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchConfig {
    pub mode: TracingMode,
    pub sample: bool,
}

impl BenchConfig {
    /// `T-<mode>` or `TS-<mode>` with sampling.
    pub fn label(&self) -> String {
        format!("{}-{}", if self.sample { "TS" } else { "T" }, self.mode)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub config: BenchConfig,
    /// Median wall time over the untraced median, minus one, in percent.
    pub median_overhead_pct: f64,
    pub median_ns: u64,
    /// Median over repetitions of (traced run time - untraced median) divided
    /// by tracepoint hits (written, filtered and dropped events), with writer
    /// setup and finalization excluded.
    pub per_event_ns: f64,
    /// Bytes on disk for one trace directory.
    pub size_bytes: u64,
    pub events: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub workload: String,
    pub reps: usize,
    pub baseline_median_ns: u64,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn render(&self) -> String {
        let mut s = format!(
            "workload {} | {} reps | baseline median {} ns\n",
            self.workload, self.reps, self.baseline_median_ns
        );
        s.push_str(&format!(
            "{:<12} | {:>10} | {:>12} | {:>10} | {:>10}\n",
            "config", "median %", "size bytes", "events", "ns/event"
        ));
        for r in &self.rows {
            s.push_str(&format!(
                "{:<12} | {:>10.1} | {:>12} | {:>10} | {:>10.0}\n",
                r.config.label(),
                r.median_overhead_pct,
                r.size_bytes,
                r.events,
                r.per_event_ns
            ));
        }
        s
    }
}

fn median(mut xs: Vec<u64>) -> u64 {
    xs.sort_unstable();
    match xs.len() {
        0 => 0,
        n if n % 2 == 1 => xs[n / 2],
        n => (xs[n / 2 - 1] + xs[n / 2]) / 2,
    }
}

fn dir_size(dir: &Path) -> Result<u64, CliError> {
    let mut total = 0;
    for entry in fs::read_dir(dir).map_err(io(dir))? {
        let entry = entry.map_err(io(dir))?;
        total += entry.metadata().map_err(io(&entry.path()))?.len();
    }
    Ok(total)
}

/// Times `spec` untraced and under each configuration, `reps` times each,
/// using the wall clock against the bundled mock model. Traces go to fresh directories under `scratch`
/// and are removed after measuring.
pub fn run_bench(
    spec: &WorkloadSpec,
    configs: &[BenchConfig],
    reps: usize,
    sample_period_ns: u64,
    scratch: &Path,
) -> Result<BenchReport, CliError> {
    let reps = reps.max(1);
    let base = RunOptions {
        wall_clock: true,
        ..RunOptions::default()
    };
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        run_untraced(spec, &base)?;
        times.push(t.elapsed().as_nanos() as u64);
    }
    let baseline = median(times).max(1);
    fs::create_dir_all(scratch).map_err(io(scratch))?;
    let model = mock_model();
    let registry = build_schema_registry(&model, Scenario::Hybrid)?;
    let mut rows = Vec::new();
    for (i, config) in configs.iter().enumerate() {
        let options = RunOptions {
            sample_period_ns: config.sample.then_some(sample_period_ns),
            ..base.clone()
        };
        let mut times = Vec::with_capacity(reps);
        let mut per_event = Vec::with_capacity(reps);
        let (mut size_bytes, mut events) = (0, 0);
        for rep in 0..reps {
            let dir = scratch.join(format!("{}-{i}-{rep}", config.label()));
            let t = Instant::now();
            let config_w = WriterConfig {
                mode: config.mode,
                clock: ClockKind::MonotonicWall,
                model: Some(model.clone()),
                ..WriterConfig::default()
            };
            let writer = open_trace_writer(&dir, registry.clone(), config_w)?;
            let hot = Instant::now();
            run_workload(spec, &model, &writer, &options)?;
            let hot_ns = hot.elapsed().as_nanos() as u64;
            let streams = writer.finalize()?;
            times.push(t.elapsed().as_nanos() as u64);
            size_bytes = dir_size(&dir)?;
            events = streams.iter().map(|s| s.event_count).sum();
            let hits: u64 = streams
                .iter()
                .map(|s| s.event_count + s.filtered_count + s.dropped_count)
                .sum();
            per_event.push(hot_ns.saturating_sub(baseline) as f64 / hits.max(1) as f64);
            fs::remove_dir_all(&dir).map_err(io(&dir))?;
        }
        per_event.sort_by(f64::total_cmp);
        let m = median(times);
        rows.push(BenchRow {
            config: *config,
            median_overhead_pct: (m as f64 / baseline as f64 - 1.0) * 100.0,
            median_ns: m,
            per_event_ns: per_event[per_event.len() / 2],
            size_bytes,
            events,
        });
    }
    Ok(BenchReport {
        workload: spec.name.clone(),
        reps,
        baseline_median_ns: baseline,
        rows,
    })
}

fn cmd_bench(a: BenchArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let spec = WorkloadSpec::resolve(&a.workload)?;
    let modes = if a.mode.is_empty() {
        TracingMode::ALL.to_vec()
    } else {
        a.mode.clone()
    };
    let mut configs: Vec<BenchConfig> = modes.iter().map(|&mode| BenchConfig { mode, sample: false }).collect();
    let period = a.sample.period_ns();
    if period.is_some() {
        configs.extend(modes.iter().map(|&mode| BenchConfig { mode, sample: true }));
    }
    let scratch = std::env::temp_dir().join(format!("hapitrace-bench-{}", std::process::id()));
    let result = run_bench(
        &spec,
        &configs,
        a.reps as usize,
        period.unwrap_or(DEFAULT_SAMPLE_PERIOD_MS * 1_000_000),
        &scratch,
    );
    let _ = fs::remove_dir_all(&scratch);
    emit(out, &result?.render())?;
    Ok(0)
}

fn cmd_merge(a: MergeArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let reports = a.files.iter().map(|f| read_tally(f)).collect::<Result<Vec<_>, _>>()?;
    let merged = match a.node_size {
        Some(n) => merge_hierarchical(&reports, n as usize)?,
        None => merge_tallies(&reports)?,
    };
    if let Some(path) = &a.out {
        write_tally(path, &merged)?;
    }
    emit(out, &merged.render())?;
    Ok(0)
}

fn load_model(a: &CodegenArgs) -> Result<ApiModel, CliError> {
    let (Some(header), Some(meta)) = (&a.header, &a.meta) else {
        return Ok(match a.scenario {
            Scenario::Hybrid => mock_model(),
            Scenario::Automatic => mock_model_unannotated(),
        });
    };
    let text = fs::read_to_string(header).map_err(io(header))?;
    let model = parse_header_decls(&text)?;
    if a.scenario == Scenario::Automatic {
        return Ok(model);
    }
    let meta_text = fs::read_to_string(meta).map_err(io(meta))?;
    Ok(apply_meta_params(model, &MetaParams::from_yaml(&meta_text)?)?)
}

fn cmd_codegen(a: CodegenArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let model = load_model(&a)?;
    let registry = build_schema_registry(&model, a.scenario)?;
    let source = emit_interposer_source(&model, &registry)?;
    fs::create_dir_all(&a.out).map_err(io(&a.out))?;
    let files = [
        ("interposer.c", source),
        ("hapitrace_writer.h", WRITER_HEADER.to_string()),
        (
            "registry.json",
            serde_json::to_string_pretty(&registry).expect("registry serializes"),
        ),
    ];
    for (name, text) in files {
        let path = a.out.join(name);
        fs::write(&path, text).map_err(io(&path))?;
        emit(out, &format!("{}\n", path.display()))?;
    }
    Ok(0)
}
