use std::fmt;

use serde::{Deserialize, Serialize};

/// The nine device telemetry rows shown on a timeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Counter {
    PowerDomain0,
    PowerDomain1,
    PowerDomain2,
    FrequencyDomain0,
    FrequencyDomain1,
    ComputeEngineTile0,
    ComputeEngineTile1,
    CopyEngineTile0,
    CopyEngineTile1,
}

impl Counter {
    pub const ALL: [Counter; 9] = [
        Counter::PowerDomain0,
        Counter::PowerDomain1,
        Counter::PowerDomain2,
        Counter::FrequencyDomain0,
        Counter::FrequencyDomain1,
        Counter::ComputeEngineTile0,
        Counter::ComputeEngineTile1,
        Counter::CopyEngineTile0,
        Counter::CopyEngineTile1,
    ];

    /// Track label, e.g. `Power|Domain 0`.
    pub fn label(&self) -> &'static str {
        match self {
            Counter::PowerDomain0 => "Power|Domain 0",
            Counter::PowerDomain1 => "Power|Domain 1",
            Counter::PowerDomain2 => "Power|Domain 2",
            Counter::FrequencyDomain0 => "GPU Frequency|Domain 0",
            Counter::FrequencyDomain1 => "GPU Frequency|Domain 1",
            Counter::ComputeEngineTile0 => "Compute Engine|Tile 0",
            Counter::ComputeEngineTile1 => "Compute Engine|Tile 1",
            Counter::CopyEngineTile0 => "Copy Engine|Tile 0",
            Counter::CopyEngineTile1 => "Copy Engine|Tile 1",
        }
    }

    fn slug(&self) -> &'static str {
        match self {
            Counter::PowerDomain0 => "power_domain_0",
            Counter::PowerDomain1 => "power_domain_1",
            Counter::PowerDomain2 => "power_domain_2",
            Counter::FrequencyDomain0 => "frequency_domain_0",
            Counter::FrequencyDomain1 => "frequency_domain_1",
            Counter::ComputeEngineTile0 => "compute_engine_tile_0",
            Counter::ComputeEngineTile1 => "compute_engine_tile_1",
            Counter::CopyEngineTile0 => "copy_engine_tile_0",
            Counter::CopyEngineTile1 => "copy_engine_tile_1",
        }
    }

    /// Registry name of the counter's telemetry schema.
    pub fn schema_name(&self) -> String {
        format!("telemetry:{}", self.slug())
    }

    pub fn from_schema_name(name: &str) -> Option<Counter> {
        let slug = name.strip_prefix("telemetry:")?;
        Counter::ALL.into_iter().find(|c| c.slug() == slug)
    }

    pub fn is_utilization(&self) -> bool {
        matches!(
            self,
            Counter::ComputeEngineTile0
                | Counter::ComputeEngineTile1
                | Counter::CopyEngineTile0
                | Counter::CopyEngineTile1
        )
    }
}

impl fmt::Display for Counter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}
