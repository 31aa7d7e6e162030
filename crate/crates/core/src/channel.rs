//! Broadcast channel: link reception and sensing probabilities, slot
//! assignment with half-duplex loss, and the subchannel resource grid behind
//! CBR accounting.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::rng::{DrawKey, RngStreams, Stream};
use crate::scenario::{VehicleId, World};

/// Resource grid of one 100 ms window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResourceGrid {
    pub slots_per_window: u32,
    pub subchannels_per_slot: u32,
    #[serde(rename = "subchannel_capacity_bytes")]
    pub subchannel_capacity: u32,
    #[serde(rename = "header_bytes")]
    pub header_size: u32,
    #[serde(rename = "variable_bytes")]
    pub variable_size: u32,
}

impl Default for ResourceGrid {
    fn default() -> Self {
        Self {
            slots_per_window: 100,
            subchannels_per_slot: 4,
            subchannel_capacity: 300,
            header_size: 100,
            variable_size: 52,
        }
    }
}

impl ResourceGrid {
    pub fn resources_per_window(&self) -> u32 {
        self.slots_per_window * self.subchannels_per_slot
    }

    pub fn max_payload(&self) -> u32 {
        self.subchannels_per_slot * self.subchannel_capacity
    }

    /// Largest variable count whose message still fits in one slot.
    pub fn max_variables(&self) -> usize {
        (self.max_payload().saturating_sub(self.header_size) / self.variable_size) as usize
    }

    pub fn message_bytes(&self, n_variables: usize) -> u32 {
        self.header_size + self.variable_size * n_variables as u32
    }
}

/// Subchannels taken by a message carrying `n_variables`.
pub fn message_resource_cost(n_variables: usize, grid: &ResourceGrid) -> u32 {
    grid.message_bytes(n_variables)
        .div_ceil(grid.subchannel_capacity)
        .clamp(1, grid.subchannels_per_slot)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    #[default]
    Parametric,
    Table,
    /// Every transmission is sensed and decoded by every other vehicle and
    /// half-duplex loss is disabled.
    Perfect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelParams {
    pub model: ChannelKind,
    #[serde(rename = "rx_midpoint_m")]
    pub rx_midpoint: f64,
    pub rx_slope: f64,
    pub interference_gamma: f64,
    #[serde(rename = "sense_midpoint_m")]
    pub sense_midpoint: f64,
    pub sense_slope: f64,
    pub half_duplex: bool,
    /// Reception grid file, required for the `table` model.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table_path: Option<String>,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            model: ChannelKind::Parametric,
            rx_midpoint: 300.0,
            rx_slope: 0.02,
            interference_gamma: 0.4,
            sense_midpoint: 500.0,
            sense_slope: 0.02,
            half_duplex: true,
            table_path: None,
        }
    }
}

#[inline]
fn logistic_decay(d: f64, midpoint: f64, slope: f64) -> f64 {
    1.0 / (1.0 + (slope * (d - midpoint)).exp())
}

/// Parametric reception probability `L(d) * (1 - gamma * cbr)`.
#[inline]
pub fn reception_probability(d: f64, cbr: f64, params: &ChannelParams) -> f64 {
    logistic_decay(d, params.rx_midpoint, params.rx_slope) * (1.0 - params.interference_gamma * cbr.clamp(0.0, 1.0))
}

#[inline]
pub fn sensing_probability(d: f64, params: &ChannelParams) -> f64 {
    logistic_decay(d, params.sense_midpoint, params.sense_slope)
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TableError {
    #[error("line {line}: cannot parse {token:?} as a number")]
    Number { line: usize, token: String },
    #[error("table needs a header row with at least one CBR breakpoint and at least one distance row")]
    Empty,
    #[error("line {line}: expected {expected} values, found {found}")]
    Ragged { line: usize, expected: usize, found: usize },
    #[error("{axis} breakpoints must be strictly increasing")]
    NotIncreasing { axis: &'static str },
    #[error("{axis} breakpoint {value} out of range")]
    BreakpointRange { axis: &'static str, value: f64 },
    #[error("probability {value} at row {row}, column {col} is outside [0, 1]")]
    ValueRange { row: usize, col: usize, value: f64 },
    #[error("probabilities must be non-increasing in {axis} (row {row}, column {col})")]
    NotMonotone { axis: &'static str, row: usize, col: usize },
}

/// Reception probability sampled on a (distance x CBR) grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceptionTable {
    distances: Vec<f64>,
    cbrs: Vec<f64>,
    /// Row-major by distance.
    values: Vec<Vec<f64>>,
}

impl ReceptionTable {
    pub fn new(distances: Vec<f64>, cbrs: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self, TableError> {
        if distances.is_empty() || cbrs.is_empty() {
            return Err(TableError::Empty);
        }
        strictly_increasing(&distances, "distance")?;
        strictly_increasing(&cbrs, "CBR")?;
        if let Some(&d) = distances.iter().find(|d| !(**d >= 0.0 && d.is_finite())) {
            return Err(TableError::BreakpointRange { axis: "distance", value: d });
        }
        if let Some(&c) = cbrs.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(TableError::BreakpointRange { axis: "CBR", value: c });
        }
        for (r, row) in values.iter().enumerate() {
            if row.len() != cbrs.len() {
                return Err(TableError::Ragged { line: r + 2, expected: cbrs.len(), found: row.len() });
            }
            for (c, &v) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(TableError::ValueRange { row: r, col: c, value: v });
                }
                if c > 0 && v > row[c - 1] {
                    return Err(TableError::NotMonotone { axis: "CBR", row: r, col: c });
                }
                if r > 0 && v > values[r - 1][c] {
                    return Err(TableError::NotMonotone { axis: "distance", row: r, col: c });
                }
            }
        }
        if values.len() != distances.len() {
            return Err(TableError::Ragged { line: values.len() + 1, expected: distances.len(), found: values.len() });
        }
        Ok(Self { distances, cbrs, values })
    }

    /// Bilinear interpolation, clamped to the breakpoint hull and to [0, 1].
    pub fn probability(&self, d: f64, cbr: f64) -> f64 {
        let (i0, i1, td) = bracket(&self.distances, d);
        let (j0, j1, tc) = bracket(&self.cbrs, cbr);
        let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
        let lo = lerp(self.values[i0][j0], self.values[i0][j1], tc);
        let hi = lerp(self.values[i1][j0], self.values[i1][j1], tc);
        lerp(lo, hi, td).clamp(0.0, 1.0)
    }
}

fn strictly_increasing(xs: &[f64], axis: &'static str) -> Result<(), TableError> {
    if xs.windows(2).all(|w| w[0] < w[1]) {
        Ok(())
    } else {
        Err(TableError::NotIncreasing { axis })
    }
}

fn bracket(xs: &[f64], x: f64) -> (usize, usize, f64) {
    let last = xs.len() - 1;
    if x <= xs[0] {
        return (0, 0, 0.0);
    }
    if x >= xs[last] {
        return (last, last, 0.0);
    }
    let hi = xs.partition_point(|b| *b <= x);
    let lo = hi - 1;
    (lo, hi, (x - xs[lo]) / (xs[hi] - xs[lo]))
}

impl FromStr for ReceptionTable {
    type Err = TableError;

    /// First non-comment row: a corner label followed by the CBR breakpoints.
    /// Each further row: a distance breakpoint followed by one probability per
    /// CBR breakpoint. Fields split on whitespace or commas; `#` starts a comment.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut rows = s
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("")))
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| (i, l.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()).collect::<Vec<_>>()));
        let parse = |line: usize, t: &str| t.parse::<f64>().map_err(|_| TableError::Number { line, token: t.to_string() });

        let (hline, header) = rows.next().ok_or(TableError::Empty)?;
        let cbrs = header.iter().skip(1).map(|t| parse(hline, t)).collect::<Result<Vec<_>, _>>()?;
        let mut distances = Vec::new();
        let mut values = Vec::new();
        for (line, toks) in rows {
            if toks.len() != cbrs.len() + 1 {
                return Err(TableError::Ragged { line, expected: cbrs.len() + 1, found: toks.len() });
            }
            distances.push(parse(line, toks[0])?);
            values.push(toks[1..].iter().map(|t| parse(line, t)).collect::<Result<Vec<_>, _>>()?);
        }
        Self::new(distances, cbrs, values)
    }
}

impl fmt::Display for ReceptionTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "d\\cbr")?;
        for c in &self.cbrs {
            write!(f, " {c}")?;
        }
        writeln!(f)?;
        for (d, row) in self.distances.iter().zip(&self.values) {
            write!(f, "{d}")?;
            for v in row {
                write!(f, " {v}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Link-level channel behaviour, independent of any particular world.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelModel {
    pub params: ChannelParams,
    table: Option<ReceptionTable>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ChannelError {
    #[error("channel.model = \"table\" requires a loaded reception table")]
    MissingTable,
    #[error(transparent)]
    Table(#[from] TableError),
}

impl ChannelModel {
    pub fn new(params: ChannelParams, table: Option<ReceptionTable>) -> Result<Self, ChannelError> {
        if params.model == ChannelKind::Table && table.is_none() {
            return Err(ChannelError::MissingTable);
        }
        Ok(Self { params, table })
    }

    pub fn parametric(params: ChannelParams) -> Self {
        Self { params: ChannelParams { model: ChannelKind::Parametric, ..params }, table: None }
    }

    pub fn perfect() -> Self {
        Self { params: ChannelParams { model: ChannelKind::Perfect, half_duplex: false, ..Default::default() }, table: None }
    }

    pub fn half_duplex(&self) -> bool {
        self.params.half_duplex && self.params.model != ChannelKind::Perfect
    }

    pub fn reception_probability(&self, d: f64, cbr: f64) -> f64 {
        match (self.params.model, &self.table) {
            (ChannelKind::Perfect, _) => 1.0,
            (ChannelKind::Table, Some(t)) => t.probability(d, cbr),
            _ => reception_probability(d, cbr, &self.params),
        }
    }

    /// Never below the reception probability at the same distance.
    pub fn sensing_probability(&self, d: f64) -> f64 {
        match (self.params.model, &self.table) {
            (ChannelKind::Perfect, _) => 1.0,
            (ChannelKind::Table, Some(t)) => sensing_probability(d, &self.params).max(t.probability(d, 0.0)),
            _ => sensing_probability(d, &self.params).max(reception_probability(d, 0.0, &self.params)),
        }
    }
}

/// A channel bound to a world: pairwise link quantities precomputed.
#[derive(Debug, Clone)]
pub struct Channel {
    model: ChannelModel,
    n: usize,
    distance: Vec<f64>,
    sensing: Vec<f64>,
    /// Parametric distance term `L(d)`; unused by other models.
    base: Vec<f64>,
}

impl Channel {
    pub fn new(model: ChannelModel, world: &World) -> Self {
        let n = world.n_vehicles();
        let mut distance = vec![0.0; n * n];
        let mut sensing = vec![0.0; n * n];
        let mut base = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                let d = world.vehicle_distance(VehicleId(a as u32), VehicleId(b as u32));
                distance[a * n + b] = d;
                sensing[a * n + b] = model.sensing_probability(d);
                base[a * n + b] = logistic_decay(d, model.params.rx_midpoint, model.params.rx_slope);
            }
        }
        Self { model, n, distance, sensing, base }
    }

    pub fn model(&self) -> &ChannelModel {
        &self.model
    }

    #[inline]
    pub fn distance(&self, a: VehicleId, b: VehicleId) -> f64 {
        self.distance[a.idx() * self.n + b.idx()]
    }

    #[inline]
    pub fn sensing(&self, tx: VehicleId, rx: VehicleId) -> f64 {
        self.sensing[tx.idx() * self.n + rx.idx()]
    }

    /// Reception probability of the `tx -> rx` link under the CBR seen at `rx`.
    #[inline]
    pub fn reception(&self, tx: VehicleId, rx: VehicleId, cbr: f64) -> f64 {
        let i = tx.idx() * self.n + rx.idx();
        match self.model.params.model {
            ChannelKind::Parametric => self.base[i] * (1.0 - self.model.params.interference_gamma * cbr.clamp(0.0, 1.0)),
            _ => self.model.reception_probability(self.distance[i], cbr),
        }
    }
}

/// One message handed to the channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transmission {
    pub sender: VehicleId,
    pub subchannels: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SlotAssignment {
    pub slot: u32,
    pub first_subchannel: u32,
    pub subchannels: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DeliveryOutcome {
    /// Index of the transmission within the epoch.
    pub message: usize,
    pub receiver: VehicleId,
    pub slot: u32,
    pub received: bool,
    pub sensed: bool,
}

const SENSED: u8 = 1;
const RECEIVED: u8 = 2;

/// Channel results of one epoch.
#[derive(Debug, Clone)]
pub struct EpochDelivery {
    n: usize,
    pub assignments: Vec<SlotAssignment>,
    senders: Vec<VehicleId>,
    flags: Vec<u8>,
    /// Occupied-resource bitmap per vehicle: sensed transmissions plus its own.
    occupancy: Vec<Vec<u64>>,
}

impl EpochDelivery {
    #[inline]
    pub fn received(&self, message: usize, receiver: VehicleId) -> bool {
        self.flags[message * self.n + receiver.idx()] & RECEIVED != 0
    }

    #[inline]
    pub fn sensed(&self, message: usize, receiver: VehicleId) -> bool {
        self.flags[message * self.n + receiver.idx()] & SENSED != 0
    }

    pub fn message_count(&self) -> usize {
        self.assignments.len()
    }

    /// Outcomes for every (message, other vehicle) pair, ordered by message then receiver.
    pub fn outcomes(&self) -> impl Iterator<Item = DeliveryOutcome> + '_ {
        (0..self.assignments.len()).flat_map(move |m| {
            (0..self.n)
                .filter(move |r| *r != self.senders[m].idx())
                .map(move |r| DeliveryOutcome {
                    message: m,
                    receiver: VehicleId(r as u32),
                    slot: self.assignments[m].slot,
                    received: self.flags[m * self.n + r] & RECEIVED != 0,
                    sensed: self.flags[m * self.n + r] & SENSED != 0,
                })
        })
    }

    pub fn occupied_resources(&self, v: VehicleId) -> u32 {
        self.occupancy[v.idx()].iter().map(|w| w.count_ones()).sum()
    }
}

/// Assign a slot to every transmission and draw sensing and reception for
/// every other vehicle. `cbr[v]` is the load seen at receiver `v`.
pub fn simulate_epoch_delivery(
    transmissions: &[Transmission],
    channel: &Channel,
    cbr: &[f64],
    grid: &ResourceGrid,
    epoch: u32,
    rng: &RngStreams,
) -> EpochDelivery {
    let n = channel.n;
    let words = (grid.resources_per_window() as usize).div_ceil(64);
    let assignments: Vec<SlotAssignment> = transmissions
        .iter()
        .map(|t| {
            let k = t.subchannels.clamp(1, grid.subchannels_per_slot);
            let slot = rng.below(Stream::Slots, DrawKey::new(epoch, t.sender.0, 0, 0), grid.slots_per_window);
            let first_subchannel = rng.below(Stream::Slots, DrawKey::new(epoch, t.sender.0, 0, 1), grid.subchannels_per_slot - k + 1);
            SlotAssignment { slot, first_subchannel, subchannels: k }
        })
        .collect();

    let mut tx_slot: Vec<Option<u32>> = vec![None; n];
    for (t, a) in transmissions.iter().zip(&assignments) {
        tx_slot[t.sender.idx()] = Some(a.slot);
    }

    let mut flags = vec![0u8; transmissions.len() * n];
    let mut occupancy = vec![vec![0u64; words]; n];
    let mark = |mask: &mut Vec<u64>, a: &SlotAssignment| {
        let start = a.slot * grid.subchannels_per_slot + a.first_subchannel;
        for r in start..start + a.subchannels {
            mask[r as usize / 64] |= 1 << (r % 64);
        }
    };
    let half_duplex = channel.model.half_duplex();
    // The parametric model factors into a per-link term and a per-receiver load term.
    let load: Option<Vec<f64>> = (channel.model.params.model == ChannelKind::Parametric).then(|| {
        let gamma = channel.model.params.interference_gamma;
        cbr.iter().map(|c| 1.0 - gamma * c.clamp(0.0, 1.0)).collect()
    });

    for (m, (t, a)) in transmissions.iter().zip(&assignments).enumerate() {
        mark(&mut occupancy[t.sender.idx()], a);
        let row = t.sender.idx() * n..(t.sender.idx() + 1) * n;
        let sensing_row = &channel.sensing[row.clone()];
        let base_row = &channel.base[row];
        for r in 0..n {
            if r == t.sender.idx() {
                continue;
            }
            let rx = VehicleId(r as u32);
            if half_duplex && tx_slot[r] == Some(a.slot) {
                continue;
            }
            // One uniform decides both: sensed iff u < s, received iff u < p.
            // With p <= s this gives P(sensed) = s and P(received | sensed) = p / s.
            let s = sensing_row[r];
            if s <= 0.0 {
                continue;
            }
            let p = match &load {
                Some(load) => base_row[r] * load[r],
                None => channel.reception(t.sender, rx, cbr[r]),
            };
            let (sensed, received) = if s >= 1.0 && p >= 1.0 {
                (true, true)
            } else {
                let u = rng.uniform(Stream::Channel, DrawKey::new(epoch, t.sender.0, rx.0, 0));
                (u < s, u < p)
            };
            if !sensed {
                continue;
            }
            mark(&mut occupancy[r], a);
            let f = if received { SENSED | RECEIVED } else { SENSED };
            flags[m * n + r] = f;
        }
    }

    EpochDelivery {
        n,
        assignments,
        senders: transmissions.iter().map(|t| t.sender).collect(),
        flags,
        occupancy,
    }
}

/// Fraction of the window's resources `vehicle` saw occupied, counting its own
/// transmission and every sensed one; overlapping occupancy counts once.
pub fn update_cbr(vehicle: VehicleId, delivery: &EpochDelivery, grid: &ResourceGrid) -> f64 {
    (delivery.occupied_resources(vehicle) as f64 / grid.resources_per_window() as f64).clamp(0.0, 1.0)
}
