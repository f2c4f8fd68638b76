//! Declarative workloads driven against [`MockRuntime`].
//!
//! A workload is a YAML list of steps. Each step either calls one operation or
//! groups nested steps; `repeat` unrolls a step and `thread` places it in a
//! parallel section. Consecutive top-level steps carrying `thread` form one
//! section whose threads advance round-robin, one call per turn. Everything
//! else runs in order on thread 0.
//!
//! ```yaml
//! name: tiny
//! steps:
//!   - call: init
//!   - call: cmdlist_create
//!     as: cl
//!   - call: cmdlist_close
//!     args: { list: cl }
//! ```

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::runtime::{codes, functions as f, CostTable, MockRuntime};
use crate::api_model::{mock_model, mock_model_unannotated, ApiModel};
use crate::codegen::{build_schema_registry, CodegenError, DispatchError, DispatchTable, Scenario, TracingMode};
use crate::sampler::{Sampler, SamplerError};
use crate::trace::{
    monotonic_now_ns, open_trace_writer, ClockKind, StreamHandle, StreamId, StreamInfo, TraceError, TraceWriter,
    WriterConfig,
};

/// Upper bound on unrolled instructions per workload.
pub const MAX_INSTRUCTIONS: usize = 1 << 20;
/// Virtual process id used unless the caller picks one.
pub const DEFAULT_PID: u64 = 1000;
/// The sampler stream's tid is `pid + SAMPLER_TID_OFFSET`.
pub const SAMPLER_TID_OFFSET: u64 = 1000;

const BUNDLED: [(&str, &str); 3] = [
    ("w1", include_str!("../../data/workloads/w1.yaml")),
    ("w2", include_str!("../../data/workloads/w2.yaml")),
    ("w3", include_str!("../../data/workloads/w3.yaml")),
];

/// Source text of a bundled workload (`w1`, `w2`, `w3`).
pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn bundled_names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

#[derive(Debug, thiserror::Error)]
pub enum WorkloadError {
    #[error("workload parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("step {step}: {message}")]
    Invalid { step: String, message: String },
    #[error("step {step}: `{name}` is not bound by any earlier step")]
    UnknownName { step: String, name: String },
    #[error("workload unrolls to more than {limit} instructions")]
    TooLarge { limit: usize },
    #[error("cannot read workload {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Codegen(#[from] CodegenError),
}

/// Deliberate defects a run can plant; each affects only its first opportunity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Injection {
    /// Property query with a garbage `pNext`.
    UninitPnext,
    /// Skip the first `event_destroy`.
    LeakEvent,
    /// Skip the first `cmdlist_reset`, so the list is executed twice.
    NoResetCmdlist,
}

impl Injection {
    pub const ALL: [Injection; 3] = [Injection::UninitPnext, Injection::LeakEvent, Injection::NoResetCmdlist];

    pub fn as_str(&self) -> &'static str {
        match self {
            Injection::UninitPnext => "uninit_pnext",
            Injection::LeakEvent => "leak_event",
            Injection::NoResetCmdlist => "no_reset_cmdlist",
        }
    }
}

impl std::str::FromStr for Injection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Injection::ALL
            .into_iter()
            .find(|i| i.as_str() == s)
            .ok_or_else(|| format!("unknown injection `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Init,
    GetDeviceProperties,
    MemAlloc,
    MemFree,
    CmdlistCreate,
    CmdlistAppendMemoryCopy,
    CmdlistAppendLaunchKernel,
    CmdlistClose,
    CmdlistExecute,
    CmdlistReset,
    EventCreate,
    EventDestroy,
    EventHostSynchronize,
    /// Untraced host work: advances the clock by `ns`.
    HostCompute,
    /// Untraced: moves the clock to `ns` if it is behind.
    AdvanceTo,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Step {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call: Option<Op>,
    #[serde(default, skip_serializing_if = "serde_yaml::Mapping::is_empty")]
    pub args: serde_yaml::Mapping,
    /// Name bound to the call's output handle or pointer.
    #[serde(default, rename = "as", skip_serializing_if = "Option::is_none")]
    pub bind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repeat: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thread: Option<u32>,
    /// Re-issue the call while it returns NOT_READY, at most this many times in total.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poll: Option<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inject: Vec<Injection>,
    pub steps: Vec<Step>,
}

impl WorkloadSpec {
    pub fn from_yaml(text: &str) -> Result<Self, WorkloadError> {
        let de = serde_yaml::Deserializer::from_str(text);
        let spec: WorkloadSpec = serde_path_to_error::deserialize(de).map_err(|e| WorkloadError::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        spec.compile()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, WorkloadError> {
        let text = std::fs::read_to_string(path).map_err(|source| WorkloadError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_yaml(&text)
    }

    /// A bundled workload by name, otherwise a YAML file path.
    pub fn resolve(name_or_path: &str) -> Result<Self, WorkloadError> {
        match bundled(name_or_path) {
            Some(text) => Self::from_yaml(text),
            None => Self::load(Path::new(name_or_path)),
        }
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("workload serializes")
    }

    /// Number of traced calls the workload issues, ignoring polling and injections.
    pub fn static_call_count(&self) -> Result<usize, WorkloadError> {
        let program = self.compile()?;
        Ok(program
            .sections
            .iter()
            .flat_map(|s| s.threads.iter())
            .flat_map(|(_, ins)| ins.iter())
            .filter(|i| i.action.function().is_some())
            .count())
    }

    fn compile(&self) -> Result<Program, WorkloadError> {
        compile(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
enum Ref {
    Literal(u64),
    Name(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
enum MemSpace {
    Host,
    Device,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(untagged)]
enum Timeout {
    Ns(u64),
    Named(String),
}

impl Default for Timeout {
    fn default() -> Self {
        Timeout::Named("max".into())
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NoArgs {}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AllocArgs {
    space: MemSpace,
    size: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PtrArgs {
    ptr: Ref,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateArgs {
    #[serde(default)]
    tile: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CopyArgs {
    list: Ref,
    dst: Ref,
    src: Ref,
    size: u64,
    #[serde(default)]
    signal: Option<Ref>,
    #[serde(default)]
    wait: Vec<Ref>,
}

fn one_group() -> [u64; 3] {
    [1, 1, 1]
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelArgs {
    list: Ref,
    kernel: String,
    #[serde(default = "one_group")]
    groups: [u64; 3],
    #[serde(default)]
    signal: Option<Ref>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ListArgs {
    list: Ref,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EventArgs {
    event: Ref,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SyncArgs {
    event: Ref,
    #[serde(default)]
    timeout: Timeout,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NsArgs {
    ns: u64,
}

#[derive(Debug, Clone)]
enum Action {
    Init,
    GetDeviceProperties,
    MemAlloc {
        space: MemSpace,
        size: u64,
    },
    MemFree {
        ptr: Ref,
    },
    CmdlistCreate {
        tile: u64,
    },
    AppendCopy {
        list: Ref,
        dst: Ref,
        src: Ref,
        size: u64,
        signal: Option<Ref>,
        wait: Vec<Ref>,
    },
    AppendKernel {
        list: Ref,
        kernel: String,
        groups: [u64; 3],
        signal: Option<Ref>,
    },
    Close {
        list: Ref,
    },
    Execute {
        list: Ref,
    },
    Reset {
        list: Ref,
    },
    EventCreate,
    EventDestroy {
        event: Ref,
    },
    Sync {
        event: Ref,
        timeout: u64,
    },
    HostCompute {
        ns: u64,
    },
    AdvanceTo {
        ns: u64,
    },
}

impl Action {
    fn function(&self) -> Option<&'static str> {
        Some(match self {
            Action::Init => f::INIT,
            Action::GetDeviceProperties => f::DEVICE_GET_PROPERTIES,
            Action::MemAlloc { .. } => f::MEM_ALLOC,
            Action::MemFree { .. } => f::MEM_FREE,
            Action::CmdlistCreate { .. } => f::COMMAND_LIST_CREATE,
            Action::AppendCopy { .. } => f::APPEND_MEMORY_COPY,
            Action::AppendKernel { .. } => f::APPEND_LAUNCH_KERNEL,
            Action::Close { .. } => f::COMMAND_LIST_CLOSE,
            Action::Execute { .. } => f::COMMAND_LIST_EXECUTE,
            Action::Reset { .. } => f::COMMAND_LIST_RESET,
            Action::EventCreate => f::EVENT_CREATE,
            Action::EventDestroy { .. } => f::EVENT_DESTROY,
            Action::Sync { .. } => f::EVENT_HOST_SYNCHRONIZE,
            Action::HostCompute { .. } | Action::AdvanceTo { .. } => return None,
        })
    }

    fn refs(&self) -> Vec<&Ref> {
        match self {
            Action::MemFree { ptr } => vec![ptr],
            Action::AppendCopy {
                list,
                dst,
                src,
                signal,
                wait,
                ..
            } => {
                let mut v = vec![list, dst, src];
                v.extend(signal);
                v.extend(wait);
                v
            }
            Action::AppendKernel { list, signal, .. } => {
                let mut v = vec![list];
                v.extend(signal);
                v
            }
            Action::Close { list } | Action::Execute { list } | Action::Reset { list } => vec![list],
            Action::EventDestroy { event } | Action::Sync { event, .. } => vec![event],
            _ => Vec::new(),
        }
    }

    /// Whether the operation produces a value that `as` can bind.
    fn binds(&self) -> bool {
        matches!(
            self,
            Action::Init | Action::MemAlloc { .. } | Action::CmdlistCreate { .. } | Action::EventCreate
        )
    }
}

#[derive(Debug, Clone)]
struct Instr {
    action: Action,
    bind: Option<String>,
    poll: Option<u32>,
}

#[derive(Debug, Clone)]
struct Section {
    /// `(thread, instructions)`; a sequential section has only thread 0.
    threads: Vec<(u32, Vec<Instr>)>,
}

#[derive(Debug, Clone)]
struct Program {
    sections: Vec<Section>,
}

fn parse_args<T: for<'de> Deserialize<'de>>(step: &str, args: &serde_yaml::Mapping) -> Result<T, WorkloadError> {
    serde_yaml::from_value(serde_yaml::Value::Mapping(args.clone())).map_err(|e| WorkloadError::Invalid {
        step: step.to_string(),
        message: format!("bad args: {e}"),
    })
}

fn action_of(op: Op, args: &serde_yaml::Mapping, path: &str) -> Result<Action, WorkloadError> {
    Ok(match op {
        Op::Init => parse_args::<NoArgs>(path, args).map(|_| Action::Init)?,
        Op::GetDeviceProperties => parse_args::<NoArgs>(path, args).map(|_| Action::GetDeviceProperties)?,
        Op::EventCreate => parse_args::<NoArgs>(path, args).map(|_| Action::EventCreate)?,
        Op::MemAlloc => {
            let a: AllocArgs = parse_args(path, args)?;
            Action::MemAlloc {
                space: a.space,
                size: a.size,
            }
        }
        Op::MemFree => Action::MemFree {
            ptr: parse_args::<PtrArgs>(path, args)?.ptr,
        },
        Op::CmdlistCreate => Action::CmdlistCreate {
            tile: parse_args::<CreateArgs>(path, args)?.tile,
        },
        Op::CmdlistAppendMemoryCopy => {
            let a: CopyArgs = parse_args(path, args)?;
            Action::AppendCopy {
                list: a.list,
                dst: a.dst,
                src: a.src,
                size: a.size,
                signal: a.signal,
                wait: a.wait,
            }
        }
        Op::CmdlistAppendLaunchKernel => {
            let a: KernelArgs = parse_args(path, args)?;
            Action::AppendKernel {
                list: a.list,
                kernel: a.kernel,
                groups: a.groups,
                signal: a.signal,
            }
        }
        Op::CmdlistClose => Action::Close {
            list: parse_args::<ListArgs>(path, args)?.list,
        },
        Op::CmdlistExecute => Action::Execute {
            list: parse_args::<ListArgs>(path, args)?.list,
        },
        Op::CmdlistReset => Action::Reset {
            list: parse_args::<ListArgs>(path, args)?.list,
        },
        Op::EventDestroy => Action::EventDestroy {
            event: parse_args::<EventArgs>(path, args)?.event,
        },
        Op::EventHostSynchronize => {
            let a: SyncArgs = parse_args(path, args)?;
            let timeout = match a.timeout {
                Timeout::Ns(n) => n,
                Timeout::Named(s) if s == "max" => u64::MAX,
                Timeout::Named(s) => {
                    return Err(WorkloadError::Invalid {
                        step: path.to_string(),
                        message: format!("timeout must be an integer or `max`, got `{s}`"),
                    })
                }
            };
            Action::Sync {
                event: a.event,
                timeout,
            }
        }
        Op::HostCompute => Action::HostCompute {
            ns: parse_args::<NsArgs>(path, args)?.ns,
        },
        Op::AdvanceTo => Action::AdvanceTo {
            ns: parse_args::<NsArgs>(path, args)?.ns,
        },
    })
}

struct Compiler {
    total: usize,
}

impl Compiler {
    /// Unrolls `step` into `out`, checking names against `scope` (and `global`).
    fn expand(
        &mut self,
        step: &Step,
        path: &str,
        nested: bool,
        scope: &mut Vec<String>,
        global: &[String],
        out: &mut Vec<Instr>,
    ) -> Result<(), WorkloadError> {
        let invalid = |message: &str| WorkloadError::Invalid {
            step: path.to_string(),
            message: message.to_string(),
        };
        if nested && step.thread.is_some() {
            return Err(invalid("`thread` is only allowed on top-level steps"));
        }
        let body = match (&step.call, step.steps.is_empty()) {
            (Some(_), false) => return Err(invalid("a step has either `call` or `steps`, not both")),
            (None, true) => return Err(invalid("a step needs `call` or `steps`")),
            (Some(op), true) => {
                let action = action_of(*op, &step.args, path)?;
                if step.bind.is_some() && !action.binds() {
                    return Err(invalid("this call produces nothing to bind with `as`"));
                }
                if step.poll == Some(0) {
                    return Err(invalid("`poll` must be positive"));
                }
                for r in action.refs() {
                    if let Ref::Name(n) = r {
                        if !scope.contains(n) && !global.contains(n) {
                            return Err(WorkloadError::UnknownName {
                                step: path.to_string(),
                                name: n.clone(),
                            });
                        }
                    }
                }
                if let Some(b) = &step.bind {
                    scope.push(b.clone());
                }
                Some(Instr {
                    action,
                    bind: step.bind.clone(),
                    poll: step.poll,
                })
            }
            (None, false) => {
                if step.bind.is_some() || step.poll.is_some() || !step.args.is_empty() {
                    return Err(invalid("`as`, `poll` and `args` need a `call`"));
                }
                None
            }
        };
        for _ in 0..step.repeat.unwrap_or(1) {
            match &body {
                Some(instr) => {
                    self.total += 1;
                    if self.total > MAX_INSTRUCTIONS {
                        return Err(WorkloadError::TooLarge {
                            limit: MAX_INSTRUCTIONS,
                        });
                    }
                    out.push(instr.clone());
                }
                None => {
                    for (i, s) in step.steps.iter().enumerate() {
                        self.expand(s, &format!("{path}.steps[{i}]"), true, scope, global, out)?;
                    }
                }
            }
        }
        Ok(())
    }
}

fn compile(spec: &WorkloadSpec) -> Result<Program, WorkloadError> {
    let mut c = Compiler { total: 0 };
    let mut global: Vec<String> = Vec::new();
    let mut sections: Vec<Section> = Vec::new();
    let mut i = 0;
    while i < spec.steps.len() {
        if spec.steps[i].thread.is_none() {
            let mut ins = Vec::new();
            while i < spec.steps.len() && spec.steps[i].thread.is_none() {
                let mut scope = std::mem::take(&mut global);
                c.expand(&spec.steps[i], &format!("steps[{i}]"), false, &mut scope, &[], &mut ins)?;
                global = scope;
                i += 1;
            }
            sections.push(Section {
                threads: vec![(0, ins)],
            });
        } else {
            let mut threads: BTreeMap<u32, (Vec<String>, Vec<Instr>)> = BTreeMap::new();
            while i < spec.steps.len() {
                let Some(t) = spec.steps[i].thread else { break };
                let (scope, ins) = threads.entry(t).or_default();
                c.expand(&spec.steps[i], &format!("steps[{i}]"), false, scope, &global, ins)?;
                i += 1;
            }
            sections.push(Section {
                threads: threads.into_iter().map(|(t, (_, ins))| (t, ins)).collect(),
            });
        }
    }
    Ok(Program { sections })
}

/// Knobs for one run.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub pid: u64,
    /// Defaults to the writer's hostname.
    pub hostname: Option<String>,
    /// Added to the workload's own `inject` list.
    pub injections: Vec<Injection>,
    /// Overrides the workload seed.
    pub seed: Option<u64>,
    /// Enables telemetry sampling with this period.
    pub sample_period_ns: Option<u64>,
    /// Timestamps from the monotonic wall clock instead of the virtual clock.
    pub wall_clock: bool,
    pub costs: CostTable,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            pid: DEFAULT_PID,
            hostname: None,
            injections: Vec::new(),
            seed: None,
            sample_period_ns: None,
            wall_clock: false,
            costs: CostTable::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallFailure {
    pub thread: u32,
    pub function: String,
    pub code: i64,
    pub code_name: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub workload: String,
    /// Virtual clock at the end of the run.
    pub virtual_duration_ns: u64,
    pub calls: BTreeMap<String, u64>,
    /// Calls returning neither SUCCESS nor NOT_READY.
    pub failures: Vec<CallFailure>,
    /// Calls suppressed by injections.
    pub skipped: u64,
    pub samples: u64,
    pub threads: usize,
}

impl RunSummary {
    pub fn total_calls(&self) -> u64 {
        self.calls.values().sum()
    }

    pub fn failed(&self, code: i64) -> usize {
        self.failures.iter().filter(|f| f.code == code).count()
    }
}

struct Tracing<'a> {
    table: DispatchTable,
    writer: &'a TraceWriter,
    hostname: String,
    streams: HashMap<u32, StreamHandle>,
    sampler: Option<Sampler>,
    wall: bool,
}

impl Tracing<'_> {
    fn stream(&mut self, pid: u64, thread: u32) -> Result<StreamHandle, TraceError> {
        if let Some(s) = self.streams.get(&thread) {
            return Ok(s.clone());
        }
        let s = self
            .writer
            .acquire_stream(StreamId::new(self.hostname.clone(), pid, pid + thread as u64))?;
        self.streams.insert(thread, s.clone());
        Ok(s)
    }

    fn sample(&mut self, rt: &MockRuntime) {
        if let Some(s) = &mut self.sampler {
            if self.wall {
                s.catch_up_wall(rt, monotonic_now_ns(), rt.clock());
            } else {
                s.catch_up(rt, rt.clock());
            }
        }
    }
}

struct Pending {
    uninit_pnext: bool,
    leak_event: bool,
    no_reset: bool,
}

struct Runner<'a> {
    rt: MockRuntime,
    tracing: Option<Tracing<'a>>,
    pid: u64,
    device: u64,
    global: HashMap<String, u64>,
    scopes: HashMap<u32, HashMap<String, u64>>,
    pending: Pending,
    rng: ChaCha8Rng,
    summary: RunSummary,
}

impl Runner<'_> {
    fn lookup(&self, thread: u32, parallel: bool, r: &Ref) -> u64 {
        match r {
            Ref::Literal(v) => *v,
            Ref::Name(n) => {
                let local = if parallel {
                    self.scopes.get(&thread).and_then(|s| s.get(n))
                } else {
                    None
                };
                local.or_else(|| self.global.get(n)).copied().unwrap_or(0)
            }
        }
    }

    fn call(&mut self, thread: u32, function: &'static str, args: &[u64]) -> Result<i64, WorkloadError> {
        let rc = match &mut self.tracing {
            Some(t) => {
                t.sample(&self.rt);
                let stream = t.stream(self.pid, thread)?;
                t.table.call(&mut self.rt, &stream, function, args)?
            }
            None => {
                use crate::codegen::Backend;
                self.rt.invoke(function, args).expect("mock implements every function")
            }
        };
        *self.summary.calls.entry(function.to_string()).or_default() += 1;
        if rc != codes::SUCCESS && rc != codes::NOT_READY {
            self.summary.failures.push(CallFailure {
                thread,
                function: function.to_string(),
                code: rc,
                code_name: codes::name(rc).to_string(),
            });
        }
        Ok(rc)
    }

    fn out_slot(&mut self) -> u64 {
        self.rt.alloc_scratch(8)
    }

    /// One attempt of `ins`; returns the result code (SUCCESS for untraced actions).
    fn step(&mut self, thread: u32, parallel: bool, ins: &Instr) -> Result<i64, WorkloadError> {
        let r = |s: &Self, x: &Ref| s.lookup(thread, parallel, x);
        let mut bound = None;
        let rc = match &ins.action {
            Action::HostCompute { ns } => {
                self.rt.advance(*ns);
                codes::SUCCESS
            }
            Action::AdvanceTo { ns } => {
                self.rt.advance_to(*ns);
                codes::SUCCESS
            }
            Action::Init => {
                let slot = self.out_slot();
                let rc = self.call(thread, f::INIT, &[0, slot])?;
                self.device = self.rt.memory().read_u64(slot).unwrap_or(0);
                bound = Some(self.device);
                rc
            }
            Action::GetDeviceProperties => {
                let props = self.rt.alloc_scratch(32);
                if std::mem::take(&mut self.pending.uninit_pnext) {
                    let garbage = (self.rng.gen::<u64>() & 0x00ff_ffff_ffff_fff8) | 0x0000_5500_0000_0000;
                    self.rt.memory_mut().write_u64(props, garbage);
                }
                self.call(thread, f::DEVICE_GET_PROPERTIES, &[self.device, props])?
            }
            Action::MemAlloc { space, size } => {
                let slot = self.out_slot();
                let space = match space {
                    MemSpace::Host => 0,
                    MemSpace::Device => 1,
                };
                let rc = self.call(thread, f::MEM_ALLOC, &[space, *size, slot])?;
                bound = Some(self.rt.memory().read_u64(slot).unwrap_or(0));
                rc
            }
            Action::MemFree { ptr } => {
                let p = r(self, ptr);
                self.call(thread, f::MEM_FREE, &[p])?
            }
            Action::CmdlistCreate { tile } => {
                let slot = self.out_slot();
                let rc = self.call(thread, f::COMMAND_LIST_CREATE, &[self.device, *tile, slot])?;
                bound = Some(self.rt.memory().read_u64(slot).unwrap_or(0));
                rc
            }
            Action::AppendCopy {
                list,
                dst,
                src,
                size,
                signal,
                wait,
            } => {
                let waits: Vec<u64> = wait.iter().map(|w| r(self, w)).collect();
                let pwait = if waits.is_empty() {
                    0
                } else {
                    let p = self.rt.alloc_scratch(8 * waits.len());
                    for (i, w) in waits.iter().enumerate() {
                        self.rt.memory_mut().write_u64(p + 8 * i as u64, *w);
                    }
                    p
                };
                let sig = signal.as_ref().map(|s| r(self, s)).unwrap_or(0);
                let args = [
                    r(self, list),
                    r(self, dst),
                    r(self, src),
                    *size,
                    sig,
                    waits.len() as u64,
                    pwait,
                ];
                self.call(thread, f::APPEND_MEMORY_COPY, &args)?
            }
            Action::AppendKernel {
                list,
                kernel,
                groups,
                signal,
            } => {
                let name = self.rt.scratch_cstring(kernel);
                let sig = signal.as_ref().map(|s| r(self, s)).unwrap_or(0);
                let args = [r(self, list), name, groups[0], groups[1], groups[2], sig];
                self.call(thread, f::APPEND_LAUNCH_KERNEL, &args)?
            }
            Action::Close { list } => {
                let l = r(self, list);
                self.call(thread, f::COMMAND_LIST_CLOSE, &[l])?
            }
            Action::Execute { list } => {
                let l = r(self, list);
                self.call(thread, f::COMMAND_LIST_EXECUTE, &[l])?
            }
            Action::Reset { list } => {
                if std::mem::take(&mut self.pending.no_reset) {
                    self.summary.skipped += 1;
                    return Ok(codes::SUCCESS);
                }
                let l = r(self, list);
                self.call(thread, f::COMMAND_LIST_RESET, &[l])?
            }
            Action::EventCreate => {
                let slot = self.out_slot();
                let rc = self.call(thread, f::EVENT_CREATE, &[self.device, slot])?;
                bound = Some(self.rt.memory().read_u64(slot).unwrap_or(0));
                rc
            }
            Action::EventDestroy { event } => {
                if std::mem::take(&mut self.pending.leak_event) {
                    self.summary.skipped += 1;
                    return Ok(codes::SUCCESS);
                }
                let e = r(self, event);
                self.call(thread, f::EVENT_DESTROY, &[e])?
            }
            Action::Sync { event, timeout } => {
                let e = r(self, event);
                self.call(thread, f::EVENT_HOST_SYNCHRONIZE, &[e, *timeout])?
            }
        };
        if let (Some(name), Some(v)) = (&ins.bind, bound) {
            let scope = if parallel {
                self.scopes.entry(thread).or_default()
            } else {
                &mut self.global
            };
            scope.insert(name.clone(), if rc == codes::SUCCESS { v } else { 0 });
        }
        Ok(rc)
    }

    fn run(&mut self, program: &Program) -> Result<(), WorkloadError> {
        for section in &program.sections {
            let parallel = section.threads.len() > 1 || section.threads.first().is_some_and(|(t, _)| *t != 0);
            // (pc, attempts of the current instruction) per thread
            let mut cursors = vec![(0usize, 0u32); section.threads.len()];
            loop {
                let mut progressed = false;
                for ((thread, ins), cur) in section.threads.iter().zip(cursors.iter_mut()) {
                    let Some(instr) = ins.get(cur.0) else { continue };
                    progressed = true;
                    let rc = self.step(*thread, parallel, instr)?;
                    cur.1 += 1;
                    let again = rc == codes::NOT_READY && instr.poll.is_some_and(|limit| cur.1 < limit);
                    if !again {
                        *cur = (cur.0 + 1, 0);
                    }
                }
                if !progressed {
                    break;
                }
            }
        }
        self.summary.threads = self
            .summary
            .threads
            .max(program.sections.iter().map(|s| s.threads.len()).max().unwrap_or(0));
        Ok(())
    }

    fn finish(mut self) -> Result<RunSummary, WorkloadError> {
        // Commands still in flight complete before the process exits.
        let in_flight = self.rt.pending_commands() > 0;
        self.rt.advance_to(self.rt.device_idle_at());
        if let Some(t) = &mut self.tracing {
            if in_flight {
                let stream = t.stream(self.pid, 0)?;
                t.table.flush_completed(&mut self.rt, &stream)?;
            }
            t.sample(&self.rt);
            self.summary.samples = t.sampler.as_ref().map(|s| s.samples()).unwrap_or(0);
        }
        self.summary.virtual_duration_ns = self.rt.clock();
        Ok(self.summary)
    }
}

fn runner<'a>(spec: &WorkloadSpec, options: &RunOptions, tracing: Option<Tracing<'a>>) -> Runner<'a> {
    let inject = |i: Injection| spec.inject.contains(&i) || options.injections.contains(&i);
    Runner {
        rt: MockRuntime::new(options.costs.clone()),
        tracing,
        pid: options.pid,
        device: 0,
        global: HashMap::new(),
        scopes: HashMap::new(),
        pending: Pending {
            uninit_pnext: inject(Injection::UninitPnext),
            leak_event: inject(Injection::LeakEvent),
            no_reset: inject(Injection::NoResetCmdlist),
        },
        rng: ChaCha8Rng::seed_from_u64(options.seed.unwrap_or(spec.seed)),
        summary: RunSummary {
            workload: spec.name.clone(),
            ..RunSummary::default()
        },
    }
}

/// Runs `spec` on a fresh mock runtime, tracing every call into `writer`.
///
/// `model` must be the model the writer's registry was built from. The
/// writer is left open; the caller finalizes it.
pub fn run_workload(
    spec: &WorkloadSpec,
    model: &ApiModel,
    writer: &TraceWriter,
    options: &RunOptions,
) -> Result<RunSummary, WorkloadError> {
    let program = spec.compile()?;
    let clock = if options.wall_clock {
        ClockKind::MonotonicWall
    } else {
        ClockKind::Virtual
    };
    let table = DispatchTable::new(model, writer.registry())?.with_clock(clock);
    let hostname = options
        .hostname
        .clone()
        .unwrap_or_else(|| writer.config().hostname.clone());
    let sampler = match options.sample_period_ns {
        Some(period) => {
            let stream = writer.acquire_stream(StreamId::new(
                hostname.clone(),
                options.pid,
                options.pid + SAMPLER_TID_OFFSET,
            ))?;
            let t0 = if options.wall_clock { monotonic_now_ns() } else { 0 };
            Some(Sampler::new(stream, period, t0, 0)?)
        }
        None => None,
    };
    let tracing = Tracing {
        table,
        writer,
        hostname,
        streams: HashMap::new(),
        sampler,
        wall: options.wall_clock,
    };
    let mut r = runner(spec, options, Some(tracing));
    r.run(&program)?;
    r.finish()
}

/// Runs `spec` with no tracing at all (the overhead baseline).
pub fn run_untraced(spec: &WorkloadSpec, options: &RunOptions) -> Result<RunSummary, WorkloadError> {
    let program = spec.compile()?;
    let mut r = runner(spec, options, None);
    r.run(&program)?;
    r.finish()
}

/// Traces `spec` against the bundled mock model into a new trace directory.
pub fn trace_workload(
    spec: &WorkloadSpec,
    dir: &Path,
    mode: TracingMode,
    options: &RunOptions,
) -> Result<(RunSummary, Vec<StreamInfo>), WorkloadError> {
    trace_workload_in(spec, dir, mode, Scenario::Hybrid, options)
}

/// [`trace_workload`] with an explicit scenario. The automatic scenario
/// traces the header-only model, with no meta-parameters applied.
pub fn trace_workload_in(
    spec: &WorkloadSpec,
    dir: &Path,
    mode: TracingMode,
    scenario: Scenario,
    options: &RunOptions,
) -> Result<(RunSummary, Vec<StreamInfo>), WorkloadError> {
    let model = match scenario {
        Scenario::Hybrid => mock_model(),
        Scenario::Automatic => mock_model_unannotated(),
    };
    let registry = build_schema_registry(&model, scenario)?;
    let config = WriterConfig {
        mode,
        clock: if options.wall_clock {
            ClockKind::MonotonicWall
        } else {
            ClockKind::Virtual
        },
        hostname: options
            .hostname
            .clone()
            .unwrap_or_else(|| WriterConfig::default().hostname),
        model: Some(model.clone()),
        ..WriterConfig::default()
    };
    let writer = open_trace_writer(dir, registry, config)?;
    let summary = run_workload(spec, &model, &writer, options)?;
    let infos = writer.finalize()?;
    Ok((summary, infos))
}
