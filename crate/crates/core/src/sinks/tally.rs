use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::pipeline::{Message, Sink, SinkError, SinkOutput, Span, SpanKind, StartContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    Host,
    Device,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TallyRow {
    pub name: String,
    pub section: Section,
    pub time_ns: u64,
    pub count: u64,
    pub min_ns: u64,
    pub max_ns: u64,
    /// Spans whose result was not zero.
    pub error_count: u64,
}

impl TallyRow {
    fn new(name: &str, section: Section) -> Self {
        TallyRow {
            name: name.to_string(),
            section,
            time_ns: 0,
            count: 0,
            min_ns: u64::MAX,
            max_ns: 0,
            error_count: 0,
        }
    }

    fn add(&mut self, duration: u64, error: bool) {
        self.time_ns += duration;
        self.count += 1;
        self.min_ns = self.min_ns.min(duration);
        self.max_ns = self.max_ns.max(duration);
        self.error_count += error as u64;
    }

    fn absorb(&mut self, o: &TallyRow) {
        self.time_ns += o.time_ns;
        self.count += o.count;
        self.min_ns = self.min_ns.min(o.min_ns);
        self.max_ns = self.max_ns.max(o.max_ns);
        self.error_count += o.error_count;
    }

    pub fn average_ns(&self) -> u64 {
        if self.count == 0 {
            0
        } else {
            self.time_ns / self.count
        }
    }
}

/// Per-name time totals for host calls and device commands.
///
/// Identity sets rather than counts are kept so that merging reports of
/// overlapping runs still counts each host, process and thread once.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TallyReport {
    /// Registry fingerprint of the traces this report covers; `None` for an empty report.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<u64>,
    pub backends: BTreeSet<String>,
    pub hostnames: BTreeSet<String>,
    pub processes: BTreeSet<(String, u64)>,
    pub threads: BTreeSet<(String, u64, u64)>,
    /// Sorted by time descending, then name.
    pub host: Vec<TallyRow>,
    pub device: Vec<TallyRow>,
    /// Dropped-event totals per stream (`host/pid/tid`), nonzero only.
    pub dropped: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("tally reports come from different registries ({left:#018x} vs {right:#018x})")]
pub struct FingerprintMismatch {
    pub left: u64,
    pub right: u64,
}

fn sort_rows(rows: &mut [TallyRow]) {
    rows.sort_by(|a, b| b.time_ns.cmp(&a.time_ns).then_with(|| a.name.cmp(&b.name)));
}

/// Tag shown in the report header for an API provider (`ze` -> `BACKEND_ZE`).
pub fn backend_tag(api_name: &str) -> String {
    format!("BACKEND_{}", api_name.to_ascii_uppercase())
}

impl TallyReport {
    /// Folds spans into a report; the same fold the sink performs.
    pub fn from_spans<'a>(spans: impl IntoIterator<Item = &'a Span>) -> TallyReport {
        let mut acc = Accumulator::default();
        for s in spans {
            acc.add(s);
        }
        acc.finish(TallyReport::default())
    }

    pub fn rows(&self, section: Section) -> &[TallyRow] {
        match section {
            Section::Host => &self.host,
            Section::Device => &self.device,
        }
    }

    pub fn row(&self, section: Section, name: &str) -> Option<&TallyRow> {
        self.rows(section).iter().find(|r| r.name == name)
    }

    pub fn total_ns(&self, section: Section) -> u64 {
        self.rows(section).iter().map(|r| r.time_ns).sum()
    }

    /// Share of the section total, in percent.
    pub fn percent(&self, section: Section, row: &TallyRow) -> f64 {
        let total = self.total_ns(section);
        if total == 0 {
            0.0
        } else {
            row.time_ns as f64 * 100.0 / total as f64
        }
    }

    /// Union of two reports over disjoint span sets.
    ///
    /// Reports from differently built registries do not mix.
    pub fn merge(&mut self, other: &TallyReport) -> Result<(), FingerprintMismatch> {
        match (self.fingerprint, other.fingerprint) {
            (Some(a), Some(b)) if a != b => return Err(FingerprintMismatch { left: a, right: b }),
            (None, b) => self.fingerprint = b,
            _ => {}
        }
        self.backends.extend(other.backends.iter().cloned());
        self.hostnames.extend(other.hostnames.iter().cloned());
        self.processes.extend(other.processes.iter().cloned());
        self.threads.extend(other.threads.iter().cloned());
        for (k, v) in &other.dropped {
            *self.dropped.entry(k.clone()).or_default() += v;
        }
        for (mine, theirs) in [(&mut self.host, &other.host), (&mut self.device, &other.device)] {
            for r in theirs {
                match mine.iter_mut().find(|m| m.name == r.name) {
                    Some(m) => m.absorb(r),
                    None => mine.push(r.clone()),
                }
            }
            sort_rows(mine);
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tally serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Fixed-width text report.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let backends: Vec<&str> = self.backends.iter().map(String::as_str).collect();
        let _ = writeln!(
            out,
            "{} | {} Hostnames | {} Processes | {} Threads |",
            backends.join(","),
            self.hostnames.len(),
            self.processes.len(),
            self.threads.len()
        );
        for (title, section) in [("Name", Section::Host), ("Device", Section::Device)] {
            let rows = self.rows(section);
            if rows.is_empty() && section == Section::Device {
                continue;
            }
            out.push('\n');
            render_table(&mut out, title, rows, self.total_ns(section));
        }
        if !self.dropped.is_empty() {
            out.push('\n');
            for (stream, n) in &self.dropped {
                let _ = writeln!(out, "{stream}: {n} events dropped");
            }
        }
        out
    }
}

fn render_table(out: &mut String, title: &str, rows: &[TallyRow], total: u64) {
    let w = rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(title.len());
    let _ = writeln!(
        out,
        "{title:>w$} | {:>8} | {:>7} | {:>8} | {:>8} | {:>8} | {:>8}",
        "Time", "Time(%)", "Calls", "Average", "Min", "Max"
    );
    for r in rows {
        let pct = if total == 0 {
            0.0
        } else {
            r.time_ns as f64 * 100.0 / total as f64
        };
        let _ = writeln!(
            out,
            "{:>w$} | {:>8} | {:>7.2} | {:>8} | {:>8} | {:>8} | {:>8}",
            r.name,
            format_duration(r.time_ns),
            pct,
            r.count,
            format_duration(r.average_ns()),
            format_duration(r.min_ns),
            format_duration(r.max_ns),
        );
    }
}

/// Largest unit of s, ms, us, ns keeping the value at least 1, two decimals.
pub fn format_duration(ns: u64) -> String {
    let (div, unit) = match ns {
        1_000_000_000.. => (1e9, "s"),
        1_000_000.. => (1e6, "ms"),
        1_000.. => (1e3, "us"),
        _ => (1.0, "ns"),
    };
    format!("{:.2}{unit}", ns as f64 / div)
}

#[derive(Default)]
struct Accumulator {
    host: BTreeMap<String, TallyRow>,
    device: BTreeMap<String, TallyRow>,
    hostnames: BTreeSet<String>,
    processes: BTreeSet<(String, u64)>,
    threads: BTreeSet<(String, u64, u64)>,
}

impl Accumulator {
    fn add(&mut self, s: &Span) {
        let (map, section) = match s.kind {
            SpanKind::HostApi => (&mut self.host, Section::Host),
            SpanKind::DeviceCommand => (&mut self.device, Section::Device),
        };
        if !map.contains_key(&s.name) {
            map.insert(s.name.clone(), TallyRow::new(&s.name, section));
        }
        map.get_mut(&s.name)
            .expect("inserted")
            .add(s.duration_ns(), s.result != 0);
        let id = &s.stream;
        if !self.threads.contains(&(id.hostname.clone(), id.pid, id.tid)) {
            self.hostnames.insert(id.hostname.clone());
            self.processes.insert((id.hostname.clone(), id.pid));
            self.threads.insert((id.hostname.clone(), id.pid, id.tid));
        }
    }

    fn finish(self, mut report: TallyReport) -> TallyReport {
        report.host = self.host.into_values().collect();
        report.device = self.device.into_values().collect();
        sort_rows(&mut report.host);
        sort_rows(&mut report.device);
        report.hostnames = self.hostnames;
        report.processes = self.processes;
        report.threads = self.threads;
        report
    }
}

/// Aggregates spans into a [`TallyReport`].
#[derive(Default)]
pub struct TallySink {
    fingerprint: Option<u64>,
    acc: Accumulator,
    backends: BTreeSet<String>,
    dropped: BTreeMap<String, u64>,
}

impl TallySink {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Sink for TallySink {
    fn name(&self) -> &str {
        "tally"
    }

    fn on_start(&mut self, ctx: &StartContext<'_>) -> Result<(), SinkError> {
        self.fingerprint = Some(ctx.registry.fingerprint);
        self.backends.insert(backend_tag(&ctx.registry.api_name));
        for s in ctx.streams.iter().filter(|s| s.dropped_count > 0) {
            *self.dropped.entry(s.id().to_string()).or_default() += s.dropped_count;
        }
        Ok(())
    }

    fn on_message(&mut self, msg: &Message) -> Result<(), SinkError> {
        if let Message::Span(s) = msg {
            self.acc.add(s);
        }
        Ok(())
    }

    fn on_finish(&mut self) -> Result<SinkOutput, SinkError> {
        let acc = std::mem::take(&mut self.acc);
        let report = acc.finish(TallyReport {
            fingerprint: self.fingerprint,
            backends: std::mem::take(&mut self.backends),
            dropped: std::mem::take(&mut self.dropped),
            ..TallyReport::default()
        });
        Ok(SinkOutput::Tally(report))
    }
}
