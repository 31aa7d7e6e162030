//! Content-selection error detection, recovery tracking and the per-run
//! metric accumulators.

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::channel::EpochDelivery;
use crate::scenario::{RelevanceMap, VarId, VehicleId};
use crate::tx_pipeline::{GeneratedMessage, MessageId, StageOutcome};

/// Last epoch each vehicle held each variable, from local detection or a
/// decoded message. A variable is available at epoch `t` if it was refreshed
/// in `(t - window, t]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AvailabilityStore {
    n_variables: usize,
    window: u32,
    /// `epoch + 1`, zero for never.
    last: Vec<u32>,
}

impl AvailabilityStore {
    pub fn new(n_vehicles: usize, n_variables: usize, window: u32) -> Self {
        assert!(window >= 1);
        Self { n_variables, window, last: vec![0; n_vehicles * n_variables] }
    }

    #[inline]
    pub fn refresh(&mut self, v: VehicleId, x: VarId, epoch: u32) {
        let slot = &mut self.last[v.idx() * self.n_variables + x.idx()];
        *slot = (*slot).max(epoch + 1);
    }

    #[inline]
    pub fn is_available(&self, v: VehicleId, x: VarId, now: u32) -> bool {
        let stamp = self.last[v.idx() * self.n_variables + x.idx()];
        stamp != 0 && stamp - 1 + self.window > now
    }

    /// Same test as of the end of epoch `now - 1`.
    #[inline]
    pub fn was_available_before(&self, v: VehicleId, x: VarId, now: u32) -> bool {
        let stamp = self.last[v.idx() * self.n_variables + x.idx()];
        stamp != 0 && stamp - 1 < now && stamp - 1 + self.window >= now
    }

    pub fn window(&self) -> u32 {
        self.window
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CseCause {
    Redundancy,
    Relevance,
}

/// One relevant variable omitted from one delivered message for one receiver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CseEvent {
    pub message: MessageId,
    pub transmitter: VehicleId,
    pub receiver: VehicleId,
    pub variable: VarId,
    pub cause: CseCause,
    pub epoch: u32,
    pub attempt_epoch: Option<u32>,
    pub success_epoch: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CseScan {
    pub events: Vec<CseEvent>,
    /// Relevant, unavailable variables cut for capacity rather than by an estimate.
    pub truncation_omissions: u32,
}

/// Scan one transmitted message for content-selection errors.
///
/// For every intended receiver that decoded the message, every variable the
/// transmitter detected, that is truly relevant to the receiver, left out of
/// the content and not available at the receiver at the end of the epoch
/// yields an event attributed to the stage that excluded it.
pub fn detect_cse(
    message: &GeneratedMessage,
    message_index: usize,
    delivery: &EpochDelivery,
    relevance: &RelevanceMap,
    availability: &AvailabilityStore,
) -> CseScan {
    let d = &message.decision;
    let now = message.id.epoch;
    let mut scan = CseScan::default();
    let omitted: Vec<(usize, VarId)> = d.candidates.iter().copied().enumerate().filter(|(_, x)| !d.is_included(*x)).collect();
    if omitted.is_empty() {
        return scan;
    }
    for (ri, &r) in d.receivers.iter().enumerate() {
        if !delivery.received(message_index, r) {
            continue;
        }
        for &(ci, x) in &omitted {
            if !relevance.is_relevant(r, x) || availability.is_available(r, x, now) {
                continue;
            }
            let cause = match d.stage_at(ci, ri) {
                StageOutcome::ExcludedRedundant => CseCause::Redundancy,
                StageOutcome::ExcludedIrrelevant => CseCause::Relevance,
                StageOutcome::Kept => {
                    scan.truncation_omissions += 1;
                    continue;
                }
            };
            scan.events.push(CseEvent {
                message: message.id,
                transmitter: message.sender(),
                receiver: r,
                variable: x,
                cause,
                epoch: now,
                attempt_epoch: None,
                success_epoch: None,
            });
        }
    }
    scan
}

/// Recovery bookkeeping change produced by one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RecoveryUpdate {
    pub event: usize,
    pub by: MessageId,
    pub attempt: bool,
    pub success: bool,
}

/// Open CSE events awaiting recovery, plus every event seen so far.
#[derive(Debug, Clone, Default)]
pub struct RecoveryTracker {
    events: Vec<CseEvent>,
    open: Vec<usize>,
    window: u32,
}

impl RecoveryTracker {
    pub fn new(window: u32) -> Self {
        Self { events: Vec::new(), open: Vec::new(), window }
    }

    pub fn open_events(&mut self, events: impl IntoIterator<Item = CseEvent>) {
        for e in events {
            self.open.push(self.events.len());
            self.events.push(e);
        }
    }

    /// Match this epoch's transmitted messages against open events. A message
    /// attempts recovery of an event when it carries the event's variable and
    /// counts the event's receiver as intended; it succeeds when it is also
    /// decoded by that receiver. Events older than the window are closed first.
    pub fn track(&mut self, now: u32, messages: &[&GeneratedMessage], delivery: &EpochDelivery) -> Vec<RecoveryUpdate> {
        let window = self.window;
        let events = &self.events;
        self.open.retain(|&i| now <= events[i].epoch + window);

        let mut by_var: FxHashMap<VarId, Vec<usize>> = FxHashMap::default();
        for (m, msg) in messages.iter().enumerate() {
            for &x in msg.content() {
                by_var.entry(x).or_default().push(m);
            }
        }
        let mut updates = Vec::new();
        for &i in &self.open {
            let e = &mut self.events[i];
            if e.success_epoch.is_some() || now <= e.epoch {
                continue;
            }
            let Some(ms) = by_var.get(&e.variable) else { continue };
            for &m in ms {
                let msg = messages[m];
                if msg.decision.receiver_index(e.receiver).is_none() {
                    continue;
                }
                let first_attempt = e.attempt_epoch.is_none();
                e.attempt_epoch.get_or_insert(now);
                let success = delivery.received(m, e.receiver);
                if success {
                    e.success_epoch = Some(now);
                }
                if first_attempt || success {
                    updates.push(RecoveryUpdate { event: i, by: msg.id, attempt: first_attempt, success });
                }
                if success {
                    break;
                }
            }
        }
        updates
    }

    pub fn events(&self) -> &[CseEvent] {
        &self.events
    }

    pub fn open_count(&self) -> usize {
        self.open.len()
    }
}

/// Recent transmitters of each variable, for rebroadcast classification.
#[derive(Debug, Clone, Default)]
pub struct RebroadcastTracker {
    recent: FxHashMap<VarId, Vec<(VehicleId, u32)>>,
    window: u32,
}

impl RebroadcastTracker {
    pub fn new(window: u32) -> Self {
        Self { recent: FxHashMap::default(), window }
    }

    /// Whether another vehicle transmitted `var` in the `window` epochs before `now`.
    pub fn is_rebroadcast(&self, sender: VehicleId, var: VarId, now: u32) -> bool {
        self.recent.get(&var).is_some_and(|list| {
            list.iter()
                .any(|&(s, e)| s != sender && e < now && e + self.window >= now)
        })
    }

    pub fn record(&mut self, sender: VehicleId, var: VarId, epoch: u32) {
        let list = self.recent.entry(var).or_default();
        match list.iter_mut().find(|(s, _)| *s == sender) {
            Some(entry) => entry.1 = epoch,
            None => list.push((sender, epoch)),
        }
    }

    pub fn prune(&mut self, now: u32) {
        let w = self.window;
        self.recent.retain(|_, list| {
            list.retain(|&(_, e)| e + w >= now);
            !list.is_empty()
        });
    }
}

/// ARR sample for one vehicle: (available relevant, relevant set size).
pub fn arr_sample(v: VehicleId, relevance: &RelevanceMap, availability: &AvailabilityStore, now: u32) -> (u64, u64) {
    let set = relevance.relevant_set(v);
    let avail = set.iter().filter(|x| availability.is_available(v, **x, now)).count();
    (avail as u64, set.len() as u64)
}

/// Raw counters of one run. Counters add across runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunCounts {
    pub measurement_epochs: u64,
    pub generated: u64,
    pub dropped: u64,
    pub transmitted: u64,
    pub messages_with_cse: u64,
    pub cse_events: u64,
    pub redundancy_cse: u64,
    pub relevance_cse: u64,
    pub recovery_attempts: u64,
    pub recovery_successes: u64,
    pub arr_available: u64,
    pub arr_relevant: u64,
    pub transmitted_variables: u64,
    pub rebroadcasts: u64,
    pub rebroadcast_targets: u64,
    pub useless_rebroadcast_targets: u64,
    pub truncated_variables: u64,
    pub truncation_omissions: u64,
    pub cbr_sum: f64,
    pub cbr_samples: u64,
}

impl RunCounts {
    pub fn merge(&mut self, other: &RunCounts) {
        self.measurement_epochs += other.measurement_epochs;
        self.generated += other.generated;
        self.dropped += other.dropped;
        self.transmitted += other.transmitted;
        self.messages_with_cse += other.messages_with_cse;
        self.cse_events += other.cse_events;
        self.redundancy_cse += other.redundancy_cse;
        self.relevance_cse += other.relevance_cse;
        self.recovery_attempts += other.recovery_attempts;
        self.recovery_successes += other.recovery_successes;
        self.arr_available += other.arr_available;
        self.arr_relevant += other.arr_relevant;
        self.transmitted_variables += other.transmitted_variables;
        self.rebroadcasts += other.rebroadcasts;
        self.rebroadcast_targets += other.rebroadcast_targets;
        self.useless_rebroadcast_targets += other.useless_rebroadcast_targets;
        self.truncated_variables += other.truncated_variables;
        self.truncation_omissions += other.truncation_omissions;
        self.cbr_sum += other.cbr_sum;
        self.cbr_samples += other.cbr_samples;
    }

    /// Numerator and denominator of each reported metric.
    pub fn ratios(&self) -> [(MetricName, u64, u64); 8] {
        use MetricName::*;
        [
            (PCse, self.messages_with_cse, self.transmitted),
            (Arr, self.arr_available, self.arr_relevant),
            (PAtt, self.recovery_attempts, self.cse_events),
            (PSucc, self.recovery_successes, self.cse_events),
            (PDrop, self.dropped, self.generated),
            (PRebroadcast, self.rebroadcasts, self.transmitted_variables),
            (UselessRebroadcastRatio, self.useless_rebroadcast_targets, self.rebroadcast_targets),
            (RedundancyCseRatio, self.redundancy_cse, self.cse_events),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    PCse,
    Arr,
    PAtt,
    PSucc,
    PDrop,
    PRebroadcast,
    UselessRebroadcastRatio,
    RedundancyCseRatio,
}

impl MetricName {
    pub const ALL: [MetricName; 8] = [
        MetricName::PCse,
        MetricName::Arr,
        MetricName::PAtt,
        MetricName::PSucc,
        MetricName::PDrop,
        MetricName::PRebroadcast,
        MetricName::UselessRebroadcastRatio,
        MetricName::RedundancyCseRatio,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::PCse => "p_cse",
            MetricName::Arr => "arr",
            MetricName::PAtt => "p_att",
            MetricName::PSucc => "p_succ",
            MetricName::PDrop => "p_drop",
            MetricName::PRebroadcast => "p_rebroadcast",
            MetricName::UselessRebroadcastRatio => "useless_rebroadcast_ratio",
            MetricName::RedundancyCseRatio => "redundancy_cse_ratio",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

const Z95: f64 = 1.959_963_984_540_054;

/// A ratio metric with its 95% normal-approximation interval. `mean` is
/// `None` when the denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub numerator: u64,
    pub denominator: u64,
    pub mean: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

impl Metric {
    /// Single-run estimate with the binomial standard error.
    pub fn binomial(numerator: u64, denominator: u64) -> Self {
        if denominator == 0 {
            return Self { numerator, denominator, mean: None, ci_low: None, ci_high: None };
        }
        let p = numerator as f64 / denominator as f64;
        let se = (p * (1.0 - p) / denominator as f64).sqrt();
        Self::with_se(numerator, denominator, p, se)
    }

    /// Pooled ratio over runs with a cluster-robust (per-run) standard error.
    pub fn clustered(parts: &[(u64, u64)]) -> Self {
        let num: u64 = parts.iter().map(|p| p.0).sum();
        let den: u64 = parts.iter().map(|p| p.1).sum();
        if den == 0 {
            return Self { numerator: num, denominator: den, mean: None, ci_low: None, ci_high: None };
        }
        let p = num as f64 / den as f64;
        let k = parts.iter().filter(|x| x.1 > 0).count();
        if k < 2 {
            return Self::binomial(num, den);
        }
        let ss: f64 = parts
            .iter()
            .map(|&(n, d)| {
                let r = n as f64 - p * d as f64;
                r * r
            })
            .sum();
        let se = (k as f64 / (k as f64 - 1.0) * ss).sqrt() / den as f64;
        Self::with_se(num, den, p, se)
    }

    fn with_se(numerator: u64, denominator: u64, p: f64, se: f64) -> Self {
        Self {
            numerator,
            denominator,
            mean: Some(p),
            ci_low: Some((p - Z95 * se).max(0.0)),
            ci_high: Some((p + Z95 * se).min(1.0)),
        }
    }
}

/// Aggregated metrics of one run or of several runs of one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub p_cse: Metric,
    pub arr: Metric,
    pub p_att: Metric,
    pub p_succ: Metric,
    pub p_drop: Metric,
    pub p_rebroadcast: Metric,
    pub useless_rebroadcast_ratio: Metric,
    pub redundancy_cse_ratio: Metric,
    pub counts: RunCounts,
    pub mean_cbr: Option<f64>,
    pub runs: usize,
    /// Set when there was no measurement epoch at all.
    pub empty: bool,
}

impl MetricsReport {
    pub fn finalize(counts: RunCounts) -> Self {
        Self::build(std::slice::from_ref(&counts), counts.clone(), Metric::binomial)
    }

    /// Pool several runs; intervals account for per-run clustering.
    pub fn aggregate(runs: &[RunCounts]) -> Self {
        let mut total = RunCounts::default();
        for r in runs {
            total.merge(r);
        }
        let per_metric: Vec<[(MetricName, u64, u64); 8]> = runs.iter().map(RunCounts::ratios).collect();
        let mut idx = 0usize;
        Self::build(runs, total, |_, _| {
            let parts: Vec<(u64, u64)> = per_metric.iter().map(|r| (r[idx].1, r[idx].2)).collect();
            idx += 1;
            Metric::clustered(&parts)
        })
    }

    fn build(runs: &[RunCounts], counts: RunCounts, mut metric: impl FnMut(u64, u64) -> Metric) -> Self {
        let r = counts.ratios();
        let mut m = r.iter().map(|(_, n, d)| metric(*n, *d));
        let mut next = || m.next().expect("eight metrics");
        Self {
            p_cse: next(),
            arr: next(),
            p_att: next(),
            p_succ: next(),
            p_drop: next(),
            p_rebroadcast: next(),
            useless_rebroadcast_ratio: next(),
            redundancy_cse_ratio: next(),
            mean_cbr: (counts.cbr_samples > 0).then(|| counts.cbr_sum / counts.cbr_samples as f64),
            empty: counts.measurement_epochs == 0,
            runs: runs.len(),
            counts,
        }
    }

    pub fn metric(&self, name: MetricName) -> &Metric {
        match name {
            MetricName::PCse => &self.p_cse,
            MetricName::Arr => &self.arr,
            MetricName::PAtt => &self.p_att,
            MetricName::PSucc => &self.p_succ,
            MetricName::PDrop => &self.p_drop,
            MetricName::PRebroadcast => &self.p_rebroadcast,
            MetricName::UselessRebroadcastRatio => &self.useless_rebroadcast_ratio,
            MetricName::RedundancyCseRatio => &self.redundancy_cse_ratio,
        }
    }

    pub fn relevance_cse_ratio(&self) -> Option<f64> {
        (self.counts.cse_events > 0).then(|| self.counts.relevance_cse as f64 / self.counts.cse_events as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{simulate_epoch_delivery, Channel, ChannelModel, ResourceGrid, Transmission};
    use crate::rng::RngStreams;
    use crate::scenario::{ExogenousVariable, Position, VehicleSpec, World};
    use crate::tx_pipeline::select_content;
    use approx::assert_relative_eq;

    #[test]
    fn availability_window() {
        let mut a = AvailabilityStore::new(2, 3, 10);
        let (v, x) = (VehicleId(1), VarId(2));
        assert!(!a.is_available(v, x, 0));
        a.refresh(v, x, 5);
        assert!(a.is_available(v, x, 5));
        assert!(a.is_available(v, x, 14));
        assert!(!a.is_available(v, x, 15));
        assert!(!a.was_available_before(v, x, 5));
        assert!(a.was_available_before(v, x, 6));
        assert!(a.was_available_before(v, x, 15));
        assert!(!a.was_available_before(v, x, 16));
    }

    #[test]
    fn finalize_examples() {
        let counts = RunCounts { transmitted: 100, messages_with_cse: 15, generated: 200, dropped: 20, measurement_epochs: 1, ..Default::default() };
        let r = MetricsReport::finalize(counts);
        assert_relative_eq!(r.p_cse.mean.unwrap(), 0.15);
        assert_relative_eq!(r.p_drop.mean.unwrap(), 0.1);
        assert_eq!(r.p_att.mean, None);
        assert_eq!(r.p_succ.mean, None);
        assert_eq!(r.redundancy_cse_ratio.mean, None);
        assert!(!r.empty);
        let lo = r.p_cse.ci_low.unwrap();
        let hi = r.p_cse.ci_high.unwrap();
        assert!(lo < 0.15 && hi > 0.15);
    }

    #[test]
    fn arr_examples() {
        let rel = RelevanceMap::new(400.0, 40, 100, vec![(0..40).map(VarId).collect()]);
        let mut a = AvailabilityStore::new(1, 100, 10);
        for x in 0..10 {
            a.refresh(VehicleId(0), VarId(x), 3);
        }
        assert_eq!(arr_sample(VehicleId(0), &rel, &a, 3), (10, 40));
        for x in 0..40 {
            a.refresh(VehicleId(0), VarId(x), 3);
        }
        assert_eq!(arr_sample(VehicleId(0), &rel, &a, 3), (40, 40));
    }

    #[test]
    fn rebroadcast_classification() {
        let mut t = RebroadcastTracker::new(10);
        let (a, b, x) = (VehicleId(0), VehicleId(1), VarId(3));
        assert!(!t.is_rebroadcast(a, x, 5));
        t.record(a, x, 5);
        assert!(!t.is_rebroadcast(a, x, 6), "own earlier transmission does not count");
        assert!(!t.is_rebroadcast(b, x, 5), "same-epoch transmissions are not earlier reports");
        assert!(t.is_rebroadcast(b, x, 6));
        assert!(t.is_rebroadcast(b, x, 15));
        assert!(!t.is_rebroadcast(b, x, 16));
        t.prune(16);
        assert!(!t.is_rebroadcast(b, x, 15));
    }

    #[test]
    fn clustered_interval_widens_with_between_run_spread() {
        let tight = Metric::clustered(&[(50, 100), (50, 100), (50, 100)]);
        let wide = Metric::clustered(&[(10, 100), (50, 100), (90, 100)]);
        assert_relative_eq!(tight.mean.unwrap(), 0.5);
        assert_relative_eq!(wide.mean.unwrap(), 0.5);
        assert_eq!(tight.ci_low, tight.mean);
        assert!(wide.ci_high.unwrap() - wide.ci_low.unwrap() > 0.3);
        assert_eq!(Metric::clustered(&[(0, 0), (0, 0)]).mean, None);
    }

    #[test]
    fn aggregate_pools_counts() {
        let a = RunCounts { transmitted: 10, messages_with_cse: 1, measurement_epochs: 1, ..Default::default() };
        let b = RunCounts { transmitted: 30, messages_with_cse: 9, measurement_epochs: 1, ..Default::default() };
        let r = MetricsReport::aggregate(&[a, b]);
        assert_relative_eq!(r.p_cse.mean.unwrap(), 0.25);
        assert_eq!(r.runs, 2);
        assert_eq!(r.counts.transmitted, 40);
    }

    fn three_vehicle_world() -> World {
        let vehicles = (0..3).map(|i| VehicleSpec { id: VehicleId(i), pos: Position::new(10.0 * i as f64, 0.0) }).collect();
        let variables = (0..2).map(|i| ExogenousVariable { id: VarId(i), pos: Position::new(5.0, 5.0) }).collect();
        World::from_parts(100.0, false, vehicles, variables, vec![vec![], vec![], vec![VarId(0), VarId(1)]], 400.0, Default::default()).unwrap()
    }

    #[test]
    fn cse_requires_delivery_and_attributes_cause() {
        use StageOutcome::*;
        let w = three_vehicle_world();
        let ch = Channel::new(ChannelModel::perfect(), &w);
        let grid = ResourceGrid::default();
        let rng = RngStreams::new(0);
        let decision = select_content(vec![VarId(0), VarId(1)], vec![VehicleId(2)], vec![ExcludedRedundant, ExcludedIrrelevant], &grid);
        let msg = GeneratedMessage { id: MessageId { epoch: 4, sender: VehicleId(1) }, decision, bytes: 100, subchannels: 1 };
        let delivery = simulate_epoch_delivery(&[Transmission { sender: VehicleId(1), subchannels: 1 }], &ch, &[0.0; 3], &grid, 4, &rng);
        let avail = AvailabilityStore::new(3, 2, 10);
        let scan = detect_cse(&msg, 0, &delivery, &w.relevance, &avail);
        assert_eq!(scan.events.len(), 2);
        assert_eq!(scan.events[0].cause, CseCause::Redundancy);
        assert_eq!(scan.events[1].cause, CseCause::Relevance);

        // already held by the receiver: no error
        let mut held = AvailabilityStore::new(3, 2, 10);
        held.refresh(VehicleId(2), VarId(0), 4);
        assert_eq!(detect_cse(&msg, 0, &delivery, &w.relevance, &held).events.len(), 1);

        // not delivered: no error
        let deaf = ChannelModel::parametric(crate::channel::ChannelParams { sense_midpoint: -1e9, rx_midpoint: -1e9, ..Default::default() });
        let lost = simulate_epoch_delivery(&[Transmission { sender: VehicleId(1), subchannels: 1 }], &Channel::new(deaf, &w), &[0.0; 3], &grid, 4, &rng);
        assert!(!lost.received(0, VehicleId(2)));
        assert!(detect_cse(&msg, 0, &lost, &w.relevance, &avail).events.is_empty());
    }

    #[test]
    fn recovery_attempt_and_success() {
        use StageOutcome::*;
        let w = three_vehicle_world();
        let ch = Channel::new(ChannelModel::perfect(), &w);
        let grid = ResourceGrid::default();
        let rng = RngStreams::new(0);
        let mut tracker = RecoveryTracker::new(5);
        tracker.open_events([CseEvent {
            message: MessageId { epoch: 4, sender: VehicleId(1) },
            transmitter: VehicleId(1),
            receiver: VehicleId(2),
            variable: VarId(0),
            cause: CseCause::Redundancy,
            epoch: 4,
            attempt_epoch: None,
            success_epoch: None,
        }]);
        let decision = select_content(vec![VarId(0)], vec![VehicleId(2)], vec![Kept], &grid);
        let msg = GeneratedMessage { id: MessageId { epoch: 5, sender: VehicleId(0) }, decision, bytes: 152, subchannels: 1 };
        let delivery = simulate_epoch_delivery(&[Transmission { sender: VehicleId(0), subchannels: 1 }], &ch, &[0.0; 3], &grid, 5, &rng);
        let ups = tracker.track(5, &[&msg], &delivery);
        assert_eq!(ups.len(), 1);
        let e = tracker.events()[0];
        assert_eq!(e.attempt_epoch, Some(5));
        assert_eq!(e.success_epoch, Some(5));

        // past the window the event closes untouched
        let mut late = RecoveryTracker::new(5);
        late.open_events([CseEvent { attempt_epoch: None, success_epoch: None, ..e }]);
        let msg10 = GeneratedMessage { id: MessageId { epoch: 10, sender: VehicleId(0) }, ..msg };
        assert!(late.track(10, &[&msg10], &delivery).is_empty());
        assert_eq!(late.open_count(), 0);
        assert_eq!(late.events()[0].attempt_epoch, None);
    }
}
