//! Event schemas generated from an [`ApiModel`].

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::api_model::{
    fingerprint, ApiModel, CType, Deref, FnAttr, FunctionDecl, LengthUnit, ResolvedType, ScalarKind,
};
use crate::sampler::Counter;

use super::CodegenError;

/// Upper bound on captured string and blob bytes.
pub const MAX_CAPTURE_BYTES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    U64,
    I64,
    F64,
    Address,
    String,
    Blob,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldOrigin {
    StackArg,
    DerefIn,
    DerefOut,
    Result,
    Profiling,
    Telemetry,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
    pub origin: FieldOrigin,
}

impl FieldSpec {
    fn new(name: impl Into<String>, kind: FieldKind, origin: FieldOrigin) -> Self {
        FieldSpec {
            name: name.into(),
            kind,
            origin,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventClass {
    HostEntry,
    HostExit,
    DeviceProfiling,
    TelemetrySample,
    Meta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TracingMode {
    Minimal,
    #[default]
    Default,
    Full,
}

impl TracingMode {
    pub const ALL: [TracingMode; 3] = [TracingMode::Minimal, TracingMode::Default, TracingMode::Full];

    fn bit(self) -> u8 {
        match self {
            TracingMode::Minimal => 1,
            TracingMode::Default => 2,
            TracingMode::Full => 4,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            TracingMode::Minimal => "minimal",
            TracingMode::Default => "default",
            TracingMode::Full => "full",
        }
    }
}

impl fmt::Display for TracingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TracingMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "minimal" | "min" => Ok(TracingMode::Minimal),
            "default" => Ok(TracingMode::Default),
            "full" => Ok(TracingMode::Full),
            other => Err(format!("unknown tracing mode `{other}`")),
        }
    }
}

/// Set of tracing modes in which a schema is enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(from = "Vec<TracingMode>", into = "Vec<TracingMode>")]
pub struct ModeMask(u8);

impl ModeMask {
    pub const ALL: ModeMask = ModeMask(7);

    pub fn contains(&self, mode: TracingMode) -> bool {
        self.0 & mode.bit() != 0
    }

    pub fn with(mut self, mode: TracingMode) -> Self {
        self.0 |= mode.bit();
        self
    }
}

impl From<Vec<TracingMode>> for ModeMask {
    fn from(v: Vec<TracingMode>) -> Self {
        v.into_iter().fold(ModeMask(0), ModeMask::with)
    }
}

impl From<ModeMask> for Vec<TracingMode> {
    fn from(m: ModeMask) -> Self {
        TracingMode::ALL.into_iter().filter(|t| m.contains(*t)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Headers only: stack arguments and results.
    Automatic,
    /// Headers plus meta-parameters: dereferenced payloads and device profiling.
    #[default]
    Hybrid,
}

impl std::str::FromStr for Scenario {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "automatic" => Ok(Scenario::Automatic),
            "hybrid" => Ok(Scenario::Hybrid),
            other => Err(format!("unknown scenario `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSchema {
    pub id: u32,
    pub name: String,
    pub class: EventClass,
    pub fields: Vec<FieldSpec>,
    pub mode_mask: ModeMask,
}

impl EventSchema {
    /// Prefix before the first `:` (`ze` in `ze:zeMockInit_entry`).
    pub fn provider(&self) -> &str {
        self.name.split_once(':').map(|(a, _)| a).unwrap_or("")
    }

    /// Part after the provider prefix.
    pub fn event_name(&self) -> &str {
        self.name.split_once(':').map(|(_, b)| b).unwrap_or(&self.name)
    }

    /// The traced function for host and profiling schemas.
    pub fn function(&self) -> Option<&str> {
        let ev = self.event_name();
        match self.class {
            EventClass::HostEntry => ev.strip_suffix("_entry"),
            EventClass::HostExit => ev.strip_suffix("_exit"),
            EventClass::DeviceProfiling => ev.strip_suffix("_profiling"),
            _ => None,
        }
    }

    pub fn field_index(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.name == name)
    }
}

#[derive(Serialize, Deserialize)]
struct RegistryRepr {
    api_name: String,
    scenario: Scenario,
    fingerprint: String,
    schemas: Vec<EventSchema>,
}

/// Immutable set of schemas with dense ids.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RegistryRepr", into = "RegistryRepr")]
pub struct SchemaRegistry {
    pub api_name: String,
    pub scenario: Scenario,
    pub fingerprint: u64,
    schemas: Vec<EventSchema>,
    by_name: HashMap<String, u32>,
}

impl PartialEq for SchemaRegistry {
    fn eq(&self, other: &Self) -> bool {
        self.api_name == other.api_name
            && self.scenario == other.scenario
            && self.fingerprint == other.fingerprint
            && self.schemas == other.schemas
    }
}

impl TryFrom<RegistryRepr> for SchemaRegistry {
    type Error = String;
    fn try_from(r: RegistryRepr) -> Result<Self, Self::Error> {
        let fp = r.fingerprint.trim_start_matches("0x");
        let fingerprint = u64::from_str_radix(fp, 16).map_err(|e| format!("bad fingerprint: {e}"))?;
        SchemaRegistry::from_parts(r.api_name, r.scenario, fingerprint, r.schemas)
    }
}

impl From<SchemaRegistry> for RegistryRepr {
    fn from(r: SchemaRegistry) -> Self {
        RegistryRepr {
            api_name: r.api_name,
            scenario: r.scenario,
            fingerprint: format!("0x{:016x}", r.fingerprint),
            schemas: r.schemas,
        }
    }
}

impl SchemaRegistry {
    pub fn from_parts(
        api_name: String,
        scenario: Scenario,
        fingerprint: u64,
        schemas: Vec<EventSchema>,
    ) -> Result<Self, String> {
        let mut by_name = HashMap::with_capacity(schemas.len());
        for (i, s) in schemas.iter().enumerate() {
            if s.id as usize != i {
                return Err(format!("schema ids are not dense at position {i}"));
            }
            if by_name.insert(s.name.clone(), s.id).is_some() {
                return Err(format!("duplicate schema name `{}`", s.name));
            }
        }
        Ok(SchemaRegistry {
            api_name,
            scenario,
            fingerprint,
            schemas,
            by_name,
        })
    }

    pub fn schemas(&self) -> &[EventSchema] {
        &self.schemas
    }

    pub fn get(&self, id: u32) -> Option<&EventSchema> {
        self.schemas.get(id as usize)
    }

    pub fn by_name(&self, name: &str) -> Option<&EventSchema> {
        self.by_name.get(name).map(|id| &self.schemas[*id as usize])
    }

    pub fn len(&self) -> usize {
        self.schemas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.schemas.is_empty()
    }

    pub fn entry_of(&self, function: &str) -> Option<&EventSchema> {
        self.by_name(&format!("{}:{function}_entry", self.api_name))
    }

    pub fn exit_of(&self, function: &str) -> Option<&EventSchema> {
        self.by_name(&format!("{}:{function}_exit", self.api_name))
    }

    pub fn profiling_of(&self, function: &str) -> Option<&EventSchema> {
        self.by_name(&format!("{}:{function}_profiling", self.api_name))
    }

    pub fn telemetry(&self, counter: Counter) -> Option<&EventSchema> {
        self.by_name(&counter.schema_name())
    }

    /// Names of the schemas enabled under `mode`.
    pub fn enabled_names(&self, mode: TracingMode) -> Vec<&str> {
        self.schemas
            .iter()
            .filter(|s| s.mode_mask.contains(mode))
            .map(|s| s.name.as_str())
            .collect()
    }
}

/// How the value behind a pointer is read.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DerefRead {
    /// A little-endian value of `width` bytes at `offset` from the pointer.
    Value {
        offset: usize,
        width: usize,
        kind: FieldKind,
    },
    String,
    /// `length` comes from another argument; `elem_size` converts it to bytes.
    Array {
        length_arg: usize,
        elem_size: usize,
    },
    Blob {
        size: usize,
    },
}

/// Where one payload field comes from at the call site.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Capture {
    Arg { index: usize, kind: FieldKind },
    Deref { index: usize, read: DerefRead },
    Result { kind: FieldKind },
}

/// Per-function recipe shared by the in-process wrappers and the C emitter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionPlan {
    pub function: String,
    pub entry: Vec<(FieldSpec, Capture)>,
    pub exit: Vec<(FieldSpec, Capture)>,
    /// Argument indices copied into the profiling event, with their field specs.
    pub profiling_detail: Vec<(FieldSpec, usize)>,
    pub profiled: bool,
}

/// Fixed leading fields of every device-profiling schema.
pub const PROFILING_FIELDS: [(&str, FieldKind); 7] = [
    ("device_start_ns", FieldKind::U64),
    ("device_end_ns", FieldKind::U64),
    ("command_kind", FieldKind::String),
    ("command_name", FieldKind::String),
    ("device", FieldKind::U64),
    ("tile", FieldKind::U64),
    ("engine", FieldKind::String),
];

/// Name of the single meta schema.
pub const MARKER_SCHEMA: &str = "meta:marker";

fn scalar_field_kind(kind: ScalarKind) -> FieldKind {
    match kind {
        ScalarKind::Signed => FieldKind::I64,
        ScalarKind::Unsigned => FieldKind::U64,
        ScalarKind::Float => FieldKind::F64,
        ScalarKind::Address => FieldKind::Address,
    }
}

/// Kind and byte width of a by-value C type.
fn value_kind(model: &ApiModel, ty: &CType) -> Option<(FieldKind, usize)> {
    if ty.pointer_depth > 0 {
        return Some((FieldKind::Address, 8));
    }
    match model.resolve(ty)? {
        ResolvedType::Void | ResolvedType::Struct(_) => None,
        ResolvedType::Scalar(k, w) => Some((scalar_field_kind(k), w as usize)),
        ResolvedType::Handle => Some((FieldKind::Address, 8)),
        ResolvedType::Enum => Some((FieldKind::I64, 4)),
    }
}

fn deref_fields(
    model: &ApiModel,
    f: &FunctionDecl,
    index: usize,
    deref: &Deref,
    on_exit: bool,
) -> Vec<(FieldSpec, Capture)> {
    let p = &f.params[index];
    let origin = if on_exit {
        FieldOrigin::DerefOut
    } else {
        FieldOrigin::DerefIn
    };
    let scalar_name = if on_exit {
        p.name.clone()
    } else {
        format!("{}_val", p.name)
    };
    let vals_name = format!("{}_vals", p.name);
    let pointee = p.ctype().pointee();
    let capture = |read| Capture::Deref { index, read };
    match deref {
        Deref::Scalar => {
            if pointee.pointer_depth == 0 {
                if let Some(ResolvedType::Struct(sname)) = model.resolve(&pointee) {
                    let s = model.struct_def(&sname).expect("resolved struct");
                    let (offsets, _) = s.layout();
                    return s
                        .fields
                        .iter()
                        .zip(offsets)
                        .map(|(sf, offset)| {
                            let kind = scalar_field_kind(sf.kind);
                            (
                                FieldSpec::new(format!("{}_{}", p.name, sf.name), kind, origin),
                                capture(DerefRead::Value {
                                    offset,
                                    width: sf.width as usize,
                                    kind,
                                }),
                            )
                        })
                        .collect();
                }
            }
            let (kind, width) = value_kind(model, &pointee).expect("validated scalar pointee");
            vec![(
                FieldSpec::new(scalar_name, kind, origin),
                capture(DerefRead::Value { offset: 0, width, kind }),
            )]
        }
        Deref::String => vec![(
            FieldSpec::new(scalar_name, FieldKind::String, origin),
            capture(DerefRead::String),
        )],
        Deref::Array { length, unit } => {
            let length_arg = f.param_index(length).expect("validated length param");
            let elem_size = match unit {
                LengthUnit::Bytes => 1,
                LengthUnit::Elements => model
                    .resolve(&pointee)
                    .map(|r| model.size_of(&r, pointee.pointer_depth))
                    .unwrap_or(1),
            };
            vec![(
                FieldSpec::new(vals_name, FieldKind::Blob, origin),
                capture(DerefRead::Array { length_arg, elem_size }),
            )]
        }
        Deref::Blob { size } => vec![(
            FieldSpec::new(vals_name, FieldKind::Blob, origin),
            capture(DerefRead::Blob {
                size: (*size as usize).min(MAX_CAPTURE_BYTES),
            }),
        )],
    }
}

fn check_unique(schema: &str, fields: &[(FieldSpec, Capture)]) -> Result<(), CodegenError> {
    let mut seen = std::collections::HashSet::new();
    for (fs, _) in fields {
        if !seen.insert(fs.name.as_str()) {
            return Err(CodegenError::FieldCollision {
                schema: schema.to_string(),
                field: fs.name.clone(),
            });
        }
    }
    Ok(())
}

/// Capture recipe for one function under a scenario.
pub fn function_plan(model: &ApiModel, f: &FunctionDecl, scenario: Scenario) -> Result<FunctionPlan, CodegenError> {
    let hybrid = scenario == Scenario::Hybrid;
    let mut entry = Vec::new();
    let mut exit = Vec::new();
    for (i, p) in f.params.iter().enumerate() {
        let (kind, _) = value_kind(model, &p.ctype()).ok_or_else(|| CodegenError::Unsupported {
            function: f.name.clone(),
            message: format!("parameter `{}` has no by-value representation", p.name),
        })?;
        entry.push((
            FieldSpec::new(p.name.clone(), kind, FieldOrigin::StackArg),
            Capture::Arg { index: i, kind },
        ));
        if !hybrid {
            continue;
        }
        if let Some(deref) = &p.deref {
            if p.direction.captures_on_entry() {
                entry.extend(deref_fields(model, f, i, deref, false));
            }
        }
    }
    if let Some((kind, _)) = value_kind(model, &CType::parse(&f.return_type)) {
        exit.push((
            FieldSpec::new("result", kind, FieldOrigin::Result),
            Capture::Result { kind },
        ));
    }
    if hybrid {
        for (i, p) in f.params.iter().enumerate() {
            if let Some(deref) = &p.deref {
                if p.direction.captures_on_exit() {
                    exit.extend(deref_fields(model, f, i, deref, true));
                }
            }
        }
    }
    check_unique(&format!("{}_entry", f.name), &entry)?;
    check_unique(&format!("{}_exit", f.name), &exit)?;

    let profiled = hybrid && f.has(FnAttr::Profiled);
    let mut profiling_detail = Vec::new();
    if profiled {
        for d in &f.profiling_detail {
            let idx = f.param_index(d).expect("validated detail");
            let (kind, _) = value_kind(model, &f.params[idx].ctype()).expect("validated detail kind");
            if PROFILING_FIELDS.iter().any(|(n, _)| n == d) {
                return Err(CodegenError::FieldCollision {
                    schema: format!("{}_profiling", f.name),
                    field: d.clone(),
                });
            }
            profiling_detail.push((FieldSpec::new(d.clone(), kind, FieldOrigin::Profiling), idx));
        }
    }
    Ok(FunctionPlan {
        function: f.name.clone(),
        entry,
        exit,
        profiling_detail,
        profiled,
    })
}

/// Generates the schema registry for `model`.
///
/// Ids follow model order (entry then exit per function), then device
/// profiling schemas, the meta schema, and the telemetry counters last.
pub fn build_schema_registry(model: &ApiModel, scenario: Scenario) -> Result<SchemaRegistry, CodegenError> {
    if scenario == Scenario::Hybrid {
        let offenders: Vec<String> = model
            .functions
            .iter()
            .filter(|f| f.has(FnAttr::Profiled))
            .flat_map(|f| {
                f.params
                    .iter()
                    .filter(|p| p.direction.is_unknown())
                    .map(move |p| format!("{}.{}", f.name, p.name))
            })
            .collect();
        if !offenders.is_empty() {
            return Err(CodegenError::IncompleteModel { offenders });
        }
    }

    let api = &model.api_name;
    let mut schemas = Vec::new();
    let mut push = |name: String, class: EventClass, fields: Vec<FieldSpec>, mode_mask: ModeMask| {
        let id = schemas.len() as u32;
        schemas.push(EventSchema {
            id,
            name,
            class,
            fields,
            mode_mask,
        });
    };

    let mut plans = Vec::with_capacity(model.functions.len());
    for f in &model.functions {
        let plan = function_plan(model, f, scenario)?;
        let mut mask = ModeMask::default().with(TracingMode::Full);
        if !f.has(FnAttr::DefaultExcluded) {
            mask = mask.with(TracingMode::Default);
        }
        if f.has(FnAttr::MinimalIncluded) {
            mask = mask.with(TracingMode::Minimal);
        }
        let fields = |v: &[(FieldSpec, Capture)]| v.iter().map(|(f, _)| f.clone()).collect();
        push(
            format!("{api}:{}_entry", f.name),
            EventClass::HostEntry,
            fields(&plan.entry),
            mask,
        );
        push(
            format!("{api}:{}_exit", f.name),
            EventClass::HostExit,
            fields(&plan.exit),
            mask,
        );
        plans.push(plan);
    }
    for plan in plans.iter().filter(|p| p.profiled) {
        let mut fields: Vec<FieldSpec> = PROFILING_FIELDS
            .iter()
            .map(|(n, k)| FieldSpec::new(*n, *k, FieldOrigin::Profiling))
            .collect();
        fields.extend(plan.profiling_detail.iter().map(|(fs, _)| fs.clone()));
        push(
            format!("{api}:{}_profiling", plan.function),
            EventClass::DeviceProfiling,
            fields,
            ModeMask::ALL,
        );
    }
    push(
        MARKER_SCHEMA.to_string(),
        EventClass::Meta,
        vec![FieldSpec::new("label", FieldKind::String, FieldOrigin::StackArg)],
        ModeMask::ALL,
    );
    for counter in Counter::ALL {
        push(
            counter.schema_name(),
            EventClass::TelemetrySample,
            vec![
                FieldSpec::new("device", FieldKind::U64, FieldOrigin::Telemetry),
                FieldSpec::new("value", FieldKind::F64, FieldOrigin::Telemetry),
            ],
            ModeMask::ALL,
        );
    }

    SchemaRegistry::from_parts(api.clone(), scenario, fingerprint(model), schemas).map_err(|message| {
        CodegenError::Unsupported {
            function: String::new(),
            message,
        }
    })
}
