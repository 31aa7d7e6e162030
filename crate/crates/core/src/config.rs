//! Run configuration: every model parameter with its default, plus range
//! checks that name the offending key.

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelKind, ChannelModel, ChannelParams, ReceptionTable, ResourceGrid};
use crate::congestion::CrLimitTable;
use crate::scenario::ScenarioParams;
use crate::tx_pipeline::PipelineParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CongestionParams {
    pub enabled: bool,
    pub cr_limits: CrLimitTable,
}

impl Default for CongestionParams {
    fn default() -> Self {
        Self { enabled: true, cr_limits: CrLimitTable::default() }
    }
}

impl CongestionParams {
    /// The table the gate should use: the configured one, or no limit at all.
    pub fn effective_limits(&self) -> CrLimitTable {
        if self.enabled {
            self.cr_limits.clone()
        } else {
            CrLimitTable::unlimited()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub n_vehicles: usize,
    pub seeds: Vec<u64>,
    pub epoch_ms: u32,
    pub horizon_epochs: u32,
    pub warmup_epochs: u32,
    pub availability_window_ms: u32,
    pub recovery_window_ms: u32,
    /// How long a decoded report keeps a variable redundant for the transmitter.
    /// Also the horizon over which a transmission counts as a rebroadcast.
    pub redundancy_window_ms: u32,
    pub scenario: ScenarioParams,
    pub channel: ChannelParams,
    pub grid: ResourceGrid,
    pub pipeline: PipelineParams,
    pub congestion: CongestionParams,
    /// Loaded from `channel.table_path` by whoever reads the config file.
    #[serde(skip)]
    pub reception_table: Option<ReceptionTable>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_vehicles: 200,
            seeds: (1..=20).collect(),
            epoch_ms: 100,
            horizon_epochs: 300,
            warmup_epochs: 10,
            availability_window_ms: 1000,
            recovery_window_ms: 1000,
            redundancy_window_ms: 200,
            scenario: ScenarioParams::default(),
            channel: ChannelParams::default(),
            grid: ResourceGrid::default(),
            pipeline: PipelineParams::default(),
            congestion: CongestionParams::default(),
            reception_table: None,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("{key}: {message}")]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self { key: key.into(), message: message.into() }
    }
}

fn check(ok: bool, key: &str, message: impl FnOnce() -> String) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::new(key, message()))
    }
}

fn positive(v: f64, key: &str) -> Result<(), ConfigError> {
    check(v.is_finite() && v > 0.0, key, || format!("must be a positive finite number, got {v}"))
}

fn finite(v: f64, key: &str) -> Result<(), ConfigError> {
    check(v.is_finite(), key, || format!("must be finite, got {v}"))
}

fn unit(v: f64, key: &str) -> Result<(), ConfigError> {
    check((0.0..=1.0).contains(&v), key, || format!("must lie in [0, 1], got {v}"))
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check(self.n_vehicles >= 2, "n_vehicles", || format!("must be at least 2, got {}", self.n_vehicles))?;
        check(!self.seeds.is_empty(), "seeds", || "must not be empty".into())?;
        check(self.epoch_ms > 0, "epoch_ms", || "must be positive".into())?;
        check(self.warmup_epochs <= self.horizon_epochs, "warmup_epochs", || {
            format!("{} exceeds horizon_epochs {}", self.warmup_epochs, self.horizon_epochs)
        })?;
        check(self.availability_window_ms >= self.epoch_ms, "availability_window_ms", || {
            format!("must be at least one epoch ({} ms)", self.epoch_ms)
        })?;
        check(self.recovery_window_ms >= self.epoch_ms, "recovery_window_ms", || {
            format!("must be at least one epoch ({} ms)", self.epoch_ms)
        })?;

        check(self.redundancy_window_ms >= self.epoch_ms, "redundancy_window_ms", || {
            format!("must be at least one epoch ({} ms)", self.epoch_ms)
        })?;

        let s = &self.scenario;
        positive(s.area_side, "scenario.area_side_m")?;
        check(s.density_per_km2.is_finite() && s.density_per_km2 >= 0.0, "scenario.density_per_km2", || {
            format!("must be a non-negative finite number, got {}", s.density_per_km2)
        })?;
        positive(s.relevance_range, "scenario.relevance_range_m")?;
        positive(s.detection.c1, "scenario.detection.c1")?;
        positive(s.detection.c2, "scenario.detection.c2")?;
        finite(s.detection.c3, "scenario.detection.c3")?;
        positive(s.detection.perception_range, "scenario.detection.perception_range_m")?;

        let c = &self.channel;
        finite(c.rx_midpoint, "channel.rx_midpoint_m")?;
        positive(c.rx_slope, "channel.rx_slope")?;
        finite(c.sense_midpoint, "channel.sense_midpoint_m")?;
        positive(c.sense_slope, "channel.sense_slope")?;
        unit(c.interference_gamma, "channel.interference_gamma")?;
        if c.model == ChannelKind::Table {
            check(c.table_path.is_some(), "channel.table_path", || "required when channel.model = \"table\"".into())?;
            check(self.reception_table.is_some(), "channel.table_path", || "reception table was not loaded".into())?;
        }

        let g = &self.grid;
        check(g.slots_per_window >= 1, "grid.slots_per_window", || "must be at least 1".into())?;
        check((1..=64).contains(&g.subchannels_per_slot), "grid.subchannels_per_slot", || {
            format!("must lie in 1..=64, got {}", g.subchannels_per_slot)
        })?;
        check(g.variable_size > 0, "grid.variable_bytes", || "must be positive".into())?;
        check(g.header_size < g.max_payload(), "grid.header_bytes", || {
            format!("header of {} B leaves no room in {} B", g.header_size, g.max_payload())
        })?;

        unit(self.pipeline.beta, "pipeline.beta")?;
        Ok(())
    }

    pub fn channel_model(&self) -> Result<ChannelModel, ConfigError> {
        ChannelModel::new(self.channel.clone(), self.reception_table.clone())
            .map_err(|e| ConfigError::new("channel.model", e.to_string()))
    }

    pub fn availability_window_epochs(&self) -> u32 {
        self.availability_window_ms.div_ceil(self.epoch_ms)
    }

    pub fn redundancy_window_epochs(&self) -> u32 {
        self.redundancy_window_ms.div_ceil(self.epoch_ms)
    }

    pub fn recovery_window_epochs(&self) -> u32 {
        self.recovery_window_ms.div_ceil(self.epoch_ms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = SimConfig::default();
        c.validate().unwrap();
        assert_eq!(c.availability_window_epochs(), 10);
        assert_eq!(c.recovery_window_epochs(), 10);
        assert_eq!(c.redundancy_window_epochs(), 2);
        assert_eq!(c.seeds.len(), 20);
    }

    #[test]
    fn errors_name_the_key() {
        let mut c = SimConfig::default();
        c.pipeline.beta = 1.5;
        assert_eq!(c.validate().unwrap_err().key, "pipeline.beta");

        let mut c = SimConfig::default();
        c.n_vehicles = 1;
        assert_eq!(c.validate().unwrap_err().key, "n_vehicles");

        let mut c = SimConfig::default();
        c.channel.model = ChannelKind::Table;
        assert_eq!(c.validate().unwrap_err().key, "channel.table_path");

        let mut c = SimConfig::default();
        c.warmup_epochs = 400;
        assert_eq!(c.validate().unwrap_err().key, "warmup_epochs");
    }
}
