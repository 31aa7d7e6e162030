//! Access-layer congestion control: channel occupancy ratio over a 1000 ms
//! window, CBR-dependent CR limits and the per-message drop decision.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::channel::ResourceGrid;

/// Epochs in the CR measurement window (1000 ms at 100 ms per epoch).
pub const CR_WINDOW_EPOCHS: usize = 10;

/// Own occupied subchannel-slots for the most recent epochs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CrTracker {
    ring: VecDeque<u32>,
}

impl CrTracker {
    pub fn new() -> Self {
        Self { ring: VecDeque::with_capacity(CR_WINDOW_EPOCHS) }
    }

    /// Record one epoch's own usage (0 when nothing was transmitted).
    pub fn push(&mut self, used: u32) {
        if self.ring.len() == CR_WINDOW_EPOCHS {
            self.ring.pop_front();
        }
        self.ring.push_back(used);
    }

    pub fn used(&self) -> u32 {
        self.ring.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }
}

/// Occupied share of the full window. Epochs not yet recorded count as idle.
pub fn measure_cr(tracker: &CrTracker, grid: &ResourceGrid) -> f64 {
    let capacity = CR_WINDOW_EPOCHS as f64 * grid.resources_per_window() as f64;
    (tracker.used() as f64 / capacity).clamp(0.0, 1.0)
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CrTableError {
    #[error("cr_limits must not be empty")]
    Empty,
    #[error("cr_limits: CBR bounds must be strictly increasing (entry {0})")]
    BoundsNotIncreasing(usize),
    #[error("cr_limits: the last CBR bound must be 1.0, got {0}")]
    LastBound(f64),
    #[error("cr_limits: limits must not increase with CBR (entry {0})")]
    LimitsIncreasing(usize),
    #[error("cr_limits: entry {index} has a value outside [0, 1]: {value}")]
    Range { index: usize, value: f64 },
}

/// Ordered `(cbr_upper_bound, cr_limit)` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct CrLimitTable {
    entries: Vec<(f64, f64)>,
}

impl CrLimitTable {
    pub fn new(entries: Vec<(f64, f64)>) -> Result<Self, CrTableError> {
        if entries.is_empty() {
            return Err(CrTableError::Empty);
        }
        for (i, &(bound, limit)) in entries.iter().enumerate() {
            for value in [bound, limit] {
                if !(0.0..=1.0).contains(&value) {
                    return Err(CrTableError::Range { index: i, value });
                }
            }
            if i > 0 {
                if bound <= entries[i - 1].0 {
                    return Err(CrTableError::BoundsNotIncreasing(i));
                }
                if limit > entries[i - 1].1 {
                    return Err(CrTableError::LimitsIncreasing(i));
                }
            }
        }
        let last = entries[entries.len() - 1].0;
        if last != 1.0 {
            return Err(CrTableError::LastBound(last));
        }
        Ok(Self { entries })
    }

    /// Limits of 1.0 everywhere: nothing is ever dropped.
    pub fn unlimited() -> Self {
        Self { entries: vec![(1.0, 1.0)] }
    }

    pub fn entries(&self) -> &[(f64, f64)] {
        &self.entries
    }
}

impl Default for CrLimitTable {
    fn default() -> Self {
        Self {
            entries: vec![(0.30, 0.030), (0.65, 0.006), (0.80, 0.003), (1.0, 0.002)],
        }
    }
}

impl TryFrom<Vec<(f64, f64)>> for CrLimitTable {
    type Error = CrTableError;

    fn try_from(v: Vec<(f64, f64)>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<CrLimitTable> for Vec<(f64, f64)> {
    fn from(t: CrLimitTable) -> Self {
        t.entries
    }
}

/// Limit of the first entry whose bound is at least `cbr`.
pub fn cr_limit(cbr: f64, table: &CrLimitTable) -> f64 {
    table
        .entries
        .iter()
        .find(|(bound, _)| cbr <= *bound)
        .map_or(table.entries[table.entries.len() - 1].1, |e| e.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GateDecision {
    Transmit,
    Drop,
}

/// Whole-message drop iff the transmitter's CR exceeds the limit for `cbr`.
pub fn gate_message(cr: f64, cbr: f64, table: &CrLimitTable) -> GateDecision {
    if cr > cr_limit(cbr, table) {
        GateDecision::Drop
    } else {
        GateDecision::Transmit
    }
}
