//! Transmitter-side content selection.
//!
//! Each epoch a vehicle works out who it is talking to (intended receivers),
//! then for every locally detected variable and every intended receiver runs
//! redundancy estimation followed by relevance estimation. A variable goes
//! into the message when it survives both stages for at least one receiver.
//! The per-pair stage outcomes are kept on the message so errors can be
//! attributed to the stage that caused them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::channel::{message_resource_cost, Channel, ResourceGrid};
use crate::rng::{DrawKey, RngStreams, Stream};
use crate::scenario::{RelevanceMap, VarId, VehicleId};

/// Messages from a neighbour in the last this-many generation epochs make it
/// an intended receiver.
pub const INTENDED_LOOKBACK_EPOCHS: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RedundancyMode {
    /// Anything heard over V2X is assumed held by every intended receiver.
    #[default]
    Hard,
    /// A heard variable is redundant for a receiver with the reception
    /// probability of the reporter-to-receiver link.
    Soft,
    /// Nothing is ever estimated redundant.
    Off,
}

/// Whose decoding makes a neighbour an intended receiver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IntendedRule {
    /// The transmitter decoded one of the neighbour's last two messages.
    #[default]
    TransmitterDecodes,
    /// The neighbour decoded one of the transmitter's last two messages.
    /// Uses knowledge a real transmitter would not have.
    ReceiverDecodes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineParams {
    pub redundancy: RedundancyMode,
    pub beta: f64,
    pub persistent_beta: bool,
    pub intended_rule: IntendedRule,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            redundancy: RedundancyMode::Hard,
            beta: 0.0,
            persistent_beta: false,
            intended_rule: IntendedRule::TransmitterDecodes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct NeighborRecord {
    last_decoded: u32,
    /// Sorted content of the last decoded message.
    content: Vec<VarId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Heard {
    epoch: u32,
    reporter: VehicleId,
    var: VarId,
}

/// What one vehicle has learned from the messages it decoded.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TxState {
    neighbors: BTreeMap<VehicleId, NeighborRecord>,
    /// One entry per variable per decoded message. Kept short by pruning, so
    /// a flat list beats a map here.
    heard: Vec<Heard>,
    /// Last epoch each neighbour decoded one of our messages.
    decoded_by: BTreeMap<VehicleId, u32>,
}

impl TxState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record a decoded message from `from`. Callers must only pass messages
    /// that were actually received.
    pub fn record_decoded(&mut self, from: VehicleId, epoch: u32, content: &[VarId]) {
        let rec = self.neighbors.entry(from).or_insert(NeighborRecord { last_decoded: epoch, content: Vec::new() });
        rec.last_decoded = epoch;
        rec.content.clear();
        rec.content.extend_from_slice(content);
        self.heard.extend(content.iter().map(|&var| Heard { epoch, reporter: from, var }));
    }

    pub fn record_decoded_by(&mut self, by: VehicleId, epoch: u32) {
        self.decoded_by.insert(by, epoch);
    }

    /// Forget everything older than `oldest_kept`.
    pub fn prune(&mut self, oldest_kept: u32) {
        self.neighbors.retain(|_, r| r.last_decoded >= oldest_kept);
        self.decoded_by.retain(|_, e| *e >= oldest_kept);
        self.heard.retain(|h| h.epoch >= oldest_kept);
    }

    /// Reporters of `var` decoded at or after `since`, one item per decoded message.
    pub fn reporters(&self, var: VarId, since: u32) -> impl Iterator<Item = (VehicleId, u32)> + '_ {
        self.heard
            .iter()
            .filter(move |h| h.var == var && h.epoch >= since)
            .map(|h| (h.reporter, h.epoch))
    }

    /// Every `(variable, reporter)` pair decoded at or after `since`.
    pub fn heard_since(&self, since: u32) -> impl Iterator<Item = (VarId, VehicleId)> + '_ {
        self.heard.iter().filter(move |h| h.epoch >= since).map(|h| (h.var, h.reporter))
    }

    /// Content of the last message decoded from `neighbor`, if decoded at or after `since`.
    pub fn last_content(&self, neighbor: VehicleId, since: u32) -> Option<&[VarId]> {
        self.neighbors
            .get(&neighbor)
            .filter(|r| r.last_decoded >= since)
            .map(|r| r.content.as_slice())
    }

    pub fn last_decoded(&self, neighbor: VehicleId) -> Option<u32> {
        self.neighbors.get(&neighbor).map(|r| r.last_decoded)
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty() && self.heard.is_empty() && self.decoded_by.is_empty()
    }
}

/// Neighbours whose last two generation epochs (`now - 1`, `now - 2`) produced
/// a decoded message, in id order.
pub fn estimate_intended_receivers(state: &TxState, now: u32, rule: IntendedRule) -> Vec<VehicleId> {
    let since = now.saturating_sub(INTENDED_LOOKBACK_EPOCHS);
    let recent = |e: u32| e >= since && e < now;
    match rule {
        IntendedRule::TransmitterDecodes => state
            .neighbors
            .iter()
            .filter(|(_, r)| recent(r.last_decoded))
            .map(|(id, _)| *id)
            .collect(),
        IntendedRule::ReceiverDecodes => state
            .decoded_by
            .iter()
            .filter(|(_, e)| recent(**e))
            .map(|(id, _)| *id)
            .collect(),
    }
}

/// What the transmitter has heard that bears on one (variable, receiver) pair.
#[derive(Debug, Clone, Copy, Default)]
pub struct RedundancyEvidence<'a> {
    /// Content of the receiver's last decoded message, if still fresh.
    pub receiver_content: Option<&'a [VarId]>,
    /// Vehicles whose fresh decoded messages carried the variable.
    pub reporters: &'a [VehicleId],
}

impl<'a> RedundancyEvidence<'a> {
    /// Gather the evidence from `state`, counting decodes at or after `since`.
    /// `scratch` receives the reporter list.
    pub fn gather(state: &'a TxState, var: VarId, receiver: VehicleId, since: u32, scratch: &'a mut Vec<VehicleId>) -> Self {
        scratch.clear();
        scratch.extend(state.reporters(var, since).map(|(r, _)| r));
        Self { receiver_content: state.last_content(receiver, since), reporters: scratch }
    }
}

/// Whether `var` is estimated to be already held by `receiver`.
///
/// `link_prob(reporter)` is the reception probability of the reporter to
/// receiver link. The soft-mode draw is only taken when the best such
/// probability is strictly between 0 and 1.
pub fn estimate_redundancy(
    mode: RedundancyMode,
    evidence: RedundancyEvidence<'_>,
    var: VarId,
    receiver: VehicleId,
    link_prob: impl Fn(VehicleId) -> f64,
    rng: &RngStreams,
    key: DrawKey,
) -> bool {
    if mode == RedundancyMode::Off {
        return false;
    }
    if evidence.receiver_content.is_some_and(|c| c.binary_search(&var).is_ok()) {
        return true;
    }
    if evidence.reporters.is_empty() {
        return false;
    }
    if mode == RedundancyMode::Hard {
        return true;
    }
    let mut p_red = 0.0f64;
    for &reporter in evidence.reporters {
        let p = if reporter == receiver { 1.0 } else { link_prob(reporter) };
        p_red = p_red.max(p);
        if p_red >= 1.0 {
            break;
        }
    }
    rng.bernoulli(Stream::SoftRedundancy, key, p_red)
}

/// Ground truth XOR a Bernoulli(`beta`) flip.
pub fn estimate_relevance(true_weight: f64, beta: f64, rng: &RngStreams, key: DrawKey) -> bool {
    (true_weight > 0.0) ^ rng.bernoulli(Stream::Beta, key, beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StageOutcome {
    Kept,
    ExcludedRedundant,
    ExcludedIrrelevant,
}

/// Stage outcome for every (candidate, intended receiver) pair plus the
/// resulting content.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContentDecision {
    /// Sorted local detections.
    pub candidates: Vec<VarId>,
    /// Sorted intended receivers.
    pub receivers: Vec<VehicleId>,
    /// Row-major by candidate.
    stages: Vec<StageOutcome>,
    /// Sorted.
    pub included: Vec<VarId>,
    /// Kept for some receiver but cut for capacity. Sorted.
    pub truncated: Vec<VarId>,
}

impl ContentDecision {
    #[inline]
    pub fn stage_at(&self, candidate: usize, receiver: usize) -> StageOutcome {
        self.stages[candidate * self.receivers.len() + receiver]
    }

    pub fn stage(&self, var: VarId, receiver: VehicleId) -> Option<StageOutcome> {
        let c = self.candidates.binary_search(&var).ok()?;
        let r = self.receivers.binary_search(&receiver).ok()?;
        Some(self.stage_at(c, r))
    }

    pub fn receiver_index(&self, receiver: VehicleId) -> Option<usize> {
        self.receivers.binary_search(&receiver).ok()
    }

    pub fn is_included(&self, var: VarId) -> bool {
        self.included.binary_search(&var).is_ok()
    }

    pub fn is_truncated(&self, var: VarId) -> bool {
        self.truncated.binary_search(&var).is_ok()
    }

    /// Receivers for which `var` survived both stages.
    pub fn kept_for(&self, var: VarId) -> impl Iterator<Item = VehicleId> + '_ {
        let row = self.candidates.binary_search(&var).ok();
        self.receivers
            .iter()
            .enumerate()
            .filter(move |(r, _)| row.is_some_and(|c| self.stage_at(c, *r) == StageOutcome::Kept))
            .map(|(_, id)| *id)
    }
}

/// Union of kept variables over all receivers, truncated to what one slot can
/// carry. Truncation keeps variables needed by more receivers first, ties by
/// ascending id.
pub fn select_content(candidates: Vec<VarId>, receivers: Vec<VehicleId>, stages: Vec<StageOutcome>, grid: &ResourceGrid) -> ContentDecision {
    assert_eq!(stages.len(), candidates.len() * receivers.len(), "one stage outcome per (candidate, receiver)");
    debug_assert!(candidates.windows(2).all(|w| w[0] < w[1]));
    debug_assert!(receivers.windows(2).all(|w| w[0] < w[1]));
    let nr = receivers.len();
    let mut kept: Vec<(usize, VarId)> = candidates
        .iter()
        .enumerate()
        .map(|(c, x)| (stages[c * nr..(c + 1) * nr].iter().filter(|s| **s == StageOutcome::Kept).count(), *x))
        .filter(|(k, _)| *k > 0)
        .collect();
    let cap = grid.max_variables();
    let mut truncated = Vec::new();
    if kept.len() > cap {
        kept.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        truncated = kept.split_off(cap).into_iter().map(|(_, x)| x).collect();
        truncated.sort_unstable();
    }
    let mut included: Vec<VarId> = kept.into_iter().map(|(_, x)| x).collect();
    included.sort_unstable();
    ContentDecision { candidates, receivers, stages, included, truncated }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct MessageId {
    pub epoch: u32,
    pub sender: VehicleId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedMessage {
    pub id: MessageId,
    pub decision: ContentDecision,
    pub bytes: u32,
    pub subchannels: u32,
}

impl GeneratedMessage {
    pub fn sender(&self) -> VehicleId {
        self.id.sender
    }

    pub fn content(&self) -> &[VarId] {
        &self.decision.included
    }

    pub fn intended(&self) -> &[VehicleId] {
        &self.decision.receivers
    }
}

/// Read-only inputs shared by every vehicle's pipeline in one epoch.
pub struct PipelineInputs<'a> {
    pub params: &'a PipelineParams,
    pub relevance: &'a RelevanceMap,
    pub channel: &'a Channel,
    pub grid: &'a ResourceGrid,
    /// Oldest decode epoch whose content still counts as held by receivers.
    pub redundancy_since: u32,
    pub rng: &'a RngStreams,
}

/// Run the full pipeline for `vehicle` at `epoch`. `own_cbr` stands in for the
/// receivers' load in soft redundancy estimation.
pub fn generate_message(
    vehicle: VehicleId,
    epoch: u32,
    detections: &[VarId],
    state: &TxState,
    own_cbr: f64,
    inputs: &PipelineInputs<'_>,
) -> GeneratedMessage {
    let params = inputs.params;
    let rng = inputs.rng;
    let receivers = estimate_intended_receivers(state, epoch, params.intended_rule);
    let candidates = detections.to_vec();
    let nr = receivers.len();
    let mut stages = Vec::with_capacity(candidates.len() * nr);
    let since = inputs.redundancy_since;
    let beta_epoch = if params.persistent_beta { 0 } else { epoch };
    let receiver_content: Vec<Option<&[VarId]>> = receivers.iter().map(|&r| state.last_content(r, since)).collect();
    let mut heard: Vec<Vec<VehicleId>> = vec![Vec::new(); candidates.len()];
    // Dense position lookup: the heard ledger can hold thousands of entries.
    let span = candidates.last().map_or(0, |x| x.idx() + 1);
    let mut slot = vec![u32::MAX; span];
    for (c, x) in candidates.iter().enumerate() {
        slot[x.idx()] = c as u32;
    }
    for (x, reporter) in state.heard_since(since) {
        if let Some(&c) = slot.get(x.idx()).filter(|&&c| c != u32::MAX) {
            heard[c as usize].push(reporter);
        }
    }

    for (&x, reporters) in candidates.iter().zip(&heard) {
        // Hard mode marks a heard variable redundant for everyone without drawing.
        if params.redundancy == RedundancyMode::Hard && !reporters.is_empty() {
            stages.extend(std::iter::repeat_n(StageOutcome::ExcludedRedundant, nr));
            continue;
        }
        for (&r, content) in receivers.iter().zip(&receiver_content) {
            let evidence = RedundancyEvidence { receiver_content: *content, reporters };
            let red_key = DrawKey::new(epoch, vehicle.0, r.0, x.0);
            let redundant = estimate_redundancy(
                params.redundancy,
                evidence,
                x,
                r,
                |rep| inputs.channel.reception(rep, r, own_cbr),
                rng,
                red_key,
            );
            let stage = if redundant {
                StageOutcome::ExcludedRedundant
            } else {
                let w = inputs.relevance.weight(r, x);
                if estimate_relevance(w, params.beta, rng, DrawKey::new(beta_epoch, vehicle.0, r.0, x.0)) {
                    StageOutcome::Kept
                } else {
                    StageOutcome::ExcludedIrrelevant
                }
            };
            stages.push(stage);
        }
    }

    let decision = select_content(candidates, receivers, stages, inputs.grid);
    let n = decision.included.len();
    GeneratedMessage {
        id: MessageId { epoch, sender: vehicle },
        bytes: inputs.grid.message_bytes(n),
        subchannels: message_resource_cost(n, inputs.grid),
        decision,
    }
}
