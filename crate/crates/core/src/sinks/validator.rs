use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::api_model::{ApiModel, Deref, FnAttr};
use crate::codegen::{EventClass, FieldKind, FieldOrigin, SchemaRegistry};
use crate::pipeline::{DiagnosticKind, Message, Sink, SinkError, SinkOutput, StartContext, TracedEvent};
use crate::trace::{StreamId, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    UninitPnext,
    LeakedEvent,
    CmdlistNotReset,
    OrphanExit,
}

impl Rule {
    pub fn as_str(&self) -> &'static str {
        match self {
            Rule::UninitPnext => "uninit_pnext",
            Rule::LeakedEvent => "leaked_event",
            Rule::CmdlistNotReset => "cmdlist_not_reset",
            Rule::OrphanExit => "orphan_exit",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationFinding {
    pub rule: Rule,
    /// Offending handle or address (`0x...`), or the function name for orphan exits.
    pub subject: String,
    /// Where the first offending event was recorded.
    pub stream: StreamId,
    pub timestamp_ns: u64,
    /// Schema name of that event.
    pub event: String,
    pub message: String,
}

impl fmt::Display for ValidationFinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {} at {} ns on {} ({}): {}",
            self.rule, self.subject, self.timestamp_ns, self.stream, self.event, self.message
        )
    }
}

const EXECUTE_SUFFIX: &str = "CommandListExecute";
const RESET_SUFFIX: &str = "CommandListReset";

#[derive(Default)]
struct Rules {
    /// Entry schema id -> indices of `<param>_pNext` fields.
    pnext_fields: HashMap<u32, Vec<usize>>,
    /// Exit schema id -> (result index, handle index) for handle-creating calls.
    creates: HashMap<u32, (Option<usize>, usize)>,
    /// Entry schema id -> index of the released handle.
    releases: HashMap<u32, usize>,
    execute: HashMap<u32, usize>,
    reset: HashMap<u32, usize>,
}

fn first_address_arg(registry: &SchemaRegistry, id: u32) -> Option<usize> {
    registry
        .get(id)?
        .fields
        .iter()
        .position(|f| f.origin == FieldOrigin::StackArg && f.kind == FieldKind::Address)
}

impl Rules {
    fn build(model: &ApiModel, registry: &SchemaRegistry) -> Rules {
        let mut r = Rules::default();
        for f in &model.functions {
            let (Some(entry), Some(exit)) = (registry.entry_of(&f.name), registry.exit_of(&f.name)) else {
                continue;
            };
            let pnext: Vec<usize> = f
                .params
                .iter()
                .filter(|p| matches!(p.deref, Some(Deref::Scalar)) && p.direction.captures_on_entry())
                .filter_map(|p| entry.field_index(&format!("{}_pNext", p.name)))
                .collect();
            if !pnext.is_empty() {
                r.pnext_fields.insert(entry.id, pnext);
            }
            if f.has(FnAttr::CreatesHandle) {
                let result = exit.fields.iter().position(|x| x.origin == FieldOrigin::Result);
                let handle = exit
                    .fields
                    .iter()
                    .position(|x| x.origin == FieldOrigin::DerefOut && x.kind == FieldKind::Address);
                if let Some(h) = handle {
                    r.creates.insert(exit.id, (result, h));
                }
            }
            if f.has(FnAttr::ReleasesHandle) {
                if let Some(i) = first_address_arg(registry, entry.id) {
                    r.releases.insert(entry.id, i);
                }
            }
            if f.name.ends_with(EXECUTE_SUFFIX) {
                if let Some(i) = first_address_arg(registry, entry.id) {
                    r.execute.insert(entry.id, i);
                }
            }
            if f.name.ends_with(RESET_SUFFIX) {
                if let Some(i) = first_address_arg(registry, entry.id) {
                    r.reset.insert(entry.id, i);
                }
            }
        }
        r
    }
}

struct Site {
    stream: StreamId,
    timestamp_ns: u64,
    event: String,
}

/// Post-mortem API-usage checks over raw events.
pub struct ValidatorSink {
    model: Option<ApiModel>,
    registry: Option<SchemaRegistry>,
    rules: Rules,
    live: BTreeMap<u64, Site>,
    executed: HashSet<u64>,
    flagged: HashSet<u64>,
    findings: Vec<ValidationFinding>,
}

impl ValidatorSink {
    /// Uses `model`, or the model embedded in the trace when `None`.
    pub fn new(model: Option<ApiModel>) -> Self {
        ValidatorSink {
            model,
            registry: None,
            rules: Rules::default(),
            live: BTreeMap::new(),
            executed: HashSet::new(),
            flagged: HashSet::new(),
            findings: Vec::new(),
        }
    }

    fn site(&self, ev: &TracedEvent) -> Site {
        let event = self
            .registry
            .as_ref()
            .and_then(|r| r.get(ev.record.schema_id))
            .map(|s| s.name.clone())
            .unwrap_or_default();
        Site {
            stream: (*ev.stream).clone(),
            timestamp_ns: ev.record.timestamp_ns,
            event,
        }
    }

    fn report(&mut self, rule: Rule, subject: String, site: Site, message: String) {
        self.findings.push(ValidationFinding {
            rule,
            subject,
            stream: site.stream,
            timestamp_ns: site.timestamp_ns,
            event: site.event,
            message,
        });
    }

    fn event(&mut self, ev: &TracedEvent) {
        let id = ev.record.schema_id;
        let p = &ev.record.payload;
        let addr = |i: usize| p.get(i).and_then(Value::as_u64).unwrap_or(0);
        if let Some(fields) = self.rules.pnext_fields.get(&id) {
            let bad: Vec<u64> = fields.iter().map(|i| addr(*i)).filter(|v| *v != 0).collect();
            for v in bad {
                let site = self.site(ev);
                let msg = format!("pNext is {v:#018x}; extension chains must be explicitly NULL");
                self.report(Rule::UninitPnext, format!("{v:#018x}"), site, msg);
            }
        }
        if let Some(&(result, handle)) = self.rules.creates.get(&id) {
            let ok = result
                .map(|i| p.get(i).and_then(Value::as_i64) == Some(0))
                .unwrap_or(true);
            let h = addr(handle);
            if ok && h != 0 {
                let site = self.site(ev);
                self.live.insert(h, site);
            }
        }
        if let Some(&i) = self.rules.releases.get(&id) {
            self.live.remove(&addr(i));
        }
        if let Some(&i) = self.rules.execute.get(&id) {
            let h = addr(i);
            if !self.executed.insert(h) && self.flagged.insert(h) {
                let site = self.site(ev);
                let msg = "command list executed again without a reset since its last execution".to_string();
                self.report(Rule::CmdlistNotReset, format!("{h:#018x}"), site, msg);
            }
        }
        if let Some(&i) = self.rules.reset.get(&id) {
            let h = addr(i);
            self.executed.remove(&h);
            self.flagged.remove(&h);
        }
    }

    pub fn findings(&self) -> &[ValidationFinding] {
        &self.findings
    }
}

impl Sink for ValidatorSink {
    fn name(&self) -> &str {
        "validate"
    }

    fn on_start(&mut self, ctx: &StartContext<'_>) -> Result<(), SinkError> {
        if self.model.is_none() {
            self.model = ctx.model.cloned();
        }
        let model = self.model.as_ref().ok_or_else(|| {
            SinkError::Other("validation needs an API model; none given and none in the trace".into())
        })?;
        self.rules = Rules::build(model, ctx.registry);
        self.registry = Some(ctx.registry.clone());
        Ok(())
    }

    fn on_message(&mut self, msg: &Message) -> Result<(), SinkError> {
        match msg {
            Message::Event(ev) => {
                let class = self
                    .registry
                    .as_ref()
                    .and_then(|r| r.get(ev.record.schema_id))
                    .map(|s| s.class);
                if matches!(class, Some(EventClass::HostEntry | EventClass::HostExit)) {
                    self.event(ev);
                }
            }
            Message::Diagnostic(d) if d.kind == DiagnosticKind::OrphanExit => {
                let site = Site {
                    stream: d.stream.clone(),
                    timestamp_ns: d.timestamp_ns,
                    event: self
                        .registry
                        .as_ref()
                        .and_then(|r| r.exit_of(&d.subject))
                        .map(|s| s.name.clone())
                        .unwrap_or_default(),
                };
                self.report(Rule::OrphanExit, d.subject.clone(), site, d.message.clone());
            }
            Message::EndOfStream => {
                let live = std::mem::take(&mut self.live);
                let mut leaked: Vec<(u64, Site)> = live.into_iter().collect();
                leaked.sort_by_key(|(h, s)| (s.timestamp_ns, *h));
                for (h, site) in leaked {
                    let msg = format!("handle created by {} was never released", site.event);
                    self.report(Rule::LeakedEvent, format!("{h:#018x}"), site, msg);
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn on_finish(&mut self) -> Result<SinkOutput, SinkError> {
        let mut findings = std::mem::take(&mut self.findings);
        findings.sort_by(|a, b| (a.timestamp_ns, a.rule).cmp(&(b.timestamp_ns, b.rule)));
        Ok(SinkOutput::Findings(findings))
    }
}
