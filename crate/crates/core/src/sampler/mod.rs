//! Periodic device telemetry.
//!
//! The sampler emits one value per [`Counter`] at every instant
//! `t0, t0 + p, t0 + 2p, ...`. In virtual-clock runs it is driven by the
//! workload loop, which calls [`Sampler::catch_up`] before each API call and
//! once at the end, so samples interleave deterministically with API events.

mod counter;

pub use counter::Counter;

use crate::trace::{StreamHandle, TraceError, Value};

/// Default sampling period: 50 ms.
pub const DEFAULT_PERIOD_NS: u64 = 50_000_000;

/// Device engines that telemetry distinguishes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Engine {
    Compute,
    Copy,
}

impl Engine {
    pub fn as_str(&self) -> &'static str {
        match self {
            Engine::Compute => "compute",
            Engine::Copy => "copy",
        }
    }
}

/// Source of engine activity, typically the mock device.
pub trait DeviceActivity {
    /// Whether `engine` on `tile` of `device` runs a command at time `t`
    /// (half-open: a command covers `start <= t < end`).
    fn engine_busy(&self, device: u64, tile: u64, engine: Engine, t: u64) -> bool;
}

/// Synthetic power and frequency model.
#[derive(Debug, Clone, PartialEq)]
pub struct TelemetryModel {
    pub idle_watts: f64,
    pub compute_watts: f64,
    pub copy_watts: f64,
    pub chip_overhead_watts: f64,
    pub frequency_mhz: f64,
}

impl Default for TelemetryModel {
    fn default() -> Self {
        TelemetryModel {
            idle_watts: 30.0,
            compute_watts: 150.0,
            copy_watts: 25.0,
            chip_overhead_watts: 40.0,
            frequency_mhz: 1600.0,
        }
    }
}

impl TelemetryModel {
    /// All nine counter values at instant `t`, in [`Counter::ALL`] order.
    pub fn sample(&self, act: &dyn DeviceActivity, device: u64, t: u64) -> [(Counter, f64); 9] {
        let util = |tile, engine| {
            if act.engine_busy(device, tile, engine, t) {
                1.0
            } else {
                0.0
            }
        };
        let (c0, c1) = (util(0, Engine::Compute), util(1, Engine::Compute));
        let (k0, k1) = (util(0, Engine::Copy), util(1, Engine::Copy));
        let tile_power = |c: f64, k: f64| self.idle_watts + self.compute_watts * c + self.copy_watts * k;
        let (p1, p2) = (tile_power(c0, k0), tile_power(c1, k1));
        [
            (Counter::PowerDomain0, p1 + p2 + self.chip_overhead_watts),
            (Counter::PowerDomain1, p1),
            (Counter::PowerDomain2, p2),
            (Counter::FrequencyDomain0, self.frequency_mhz),
            (Counter::FrequencyDomain1, self.frequency_mhz),
            (Counter::ComputeEngineTile0, c0),
            (Counter::ComputeEngineTile1, c1),
            (Counter::CopyEngineTile0, k0),
            (Counter::CopyEngineTile1, k1),
        ]
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SamplerError {
    #[error("sampling period must be positive")]
    ZeroPeriod,
    #[error("registry has no telemetry schema for `{0}`")]
    MissingSchema(Counter),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

pub struct Sampler {
    period_ns: u64,
    next_instant: u64,
    device: u64,
    stream: StreamHandle,
    ids: [u32; 9],
    model: TelemetryModel,
    instants: u64,
    samples: u64,
    stopped: bool,
}

impl Sampler {
    pub fn new(stream: StreamHandle, period_ns: u64, t0: u64, device: u64) -> Result<Self, SamplerError> {
        if period_ns == 0 {
            return Err(SamplerError::ZeroPeriod);
        }
        let mut ids = [0u32; 9];
        for (slot, c) in ids.iter_mut().zip(Counter::ALL) {
            *slot = stream.registry().telemetry(c).ok_or(SamplerError::MissingSchema(c))?.id;
        }
        Ok(Sampler {
            period_ns,
            next_instant: t0,
            device,
            stream,
            ids,
            model: TelemetryModel::default(),
            instants: 0,
            samples: 0,
            stopped: false,
        })
    }

    pub fn with_model(mut self, model: TelemetryModel) -> Self {
        self.model = model;
        self
    }

    pub fn period_ns(&self) -> u64 {
        self.period_ns
    }

    pub fn instants(&self) -> u64 {
        self.instants
    }

    /// Samples emitted so far (nine per instant).
    pub fn samples(&self) -> u64 {
        self.samples
    }

    /// Whether sampling stopped because the writer closed.
    pub fn is_stopped(&self) -> bool {
        self.stopped
    }

    /// Emits every instant `<= now` not yet sampled, reading activity at the instant itself.
    pub fn catch_up(&mut self, act: &dyn DeviceActivity, now: u64) -> u64 {
        self.catch_up_inner(act, now, None)
    }

    /// Wall-clock variant: instants follow `wall_now`, activity is read at `activity_time`.
    pub fn catch_up_wall(&mut self, act: &dyn DeviceActivity, wall_now: u64, activity_time: u64) -> u64 {
        self.catch_up_inner(act, wall_now, Some(activity_time))
    }

    fn catch_up_inner(&mut self, act: &dyn DeviceActivity, now: u64, activity_time: Option<u64>) -> u64 {
        let before = self.samples;
        while !self.stopped && self.next_instant <= now {
            let t = self.next_instant;
            let values = self.model.sample(act, self.device, activity_time.unwrap_or(t));
            for (id, (_, v)) in self.ids.iter().zip(values) {
                match self.stream.emit(*id, t, vec![Value::U64(self.device), Value::F64(v)]) {
                    Ok(_) => self.samples += 1,
                    Err(_) => {
                        self.stopped = true;
                        break;
                    }
                }
            }
            if self.stopped {
                break;
            }
            self.instants += 1;
            self.next_instant = t.saturating_add(self.period_ns);
        }
        self.samples - before
    }
}

/// Samples `[t0, until_ns]` in one go; returns the number of samples emitted.
///
/// A writer closing mid-run stops sampling and yields the partial count.
pub fn run_sampler(
    act: &dyn DeviceActivity,
    period_ns: u64,
    stream: StreamHandle,
    t0: u64,
    until_ns: u64,
) -> Result<u64, SamplerError> {
    let mut s = Sampler::new(stream, period_ns, t0, 0)?;
    s.catch_up(act, until_ns);
    Ok(s.samples())
}
