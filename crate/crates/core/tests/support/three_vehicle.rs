//! The two three-vehicle constructions behind the error taxonomy, driven
//! through the real pipeline, channel and metrics functions.
//!
//! Geometry: V_T at the origin, V_O 50 m away, V_R 350 m from V_T and 300 m
//! from V_O. The channel is a steep logistic with its midpoint at 325 m, so
//! V_T and V_O hear each other, V_O and V_R hear each other, and V_T and V_R
//! never do. Detection is steep around 100 m so only V_T and V_O see x_1, and
//! only V_O sees x_2.
//!
//! Shared by the core tests and the acceptance run; each scenario panics on
//! the first mismatch.

use csesim_core::channel::{simulate_epoch_delivery, Channel, ChannelModel, ChannelParams, EpochDelivery, ResourceGrid, Transmission};
use csesim_core::metrics::{detect_cse, AvailabilityStore, CseCause, CseEvent, RecoveryTracker};
use csesim_core::rng::RngStreams;
use csesim_core::scenario::{sample_detections, DetectionModelParams, ExogenousVariable, Position, VehicleSpec, World};
use csesim_core::tx_pipeline::{generate_message, GeneratedMessage, PipelineInputs, PipelineParams, RedundancyMode, StageOutcome, TxState};
use csesim_core::{VarId, VehicleId};

const VT: VehicleId = VehicleId(0);
const VO: VehicleId = VehicleId(1);
const VR: VehicleId = VehicleId(2);
const X1: VarId = VarId(0);
const X2: VarId = VarId(1);

const REDUNDANCY_WINDOW: u32 = 2;
const RECOVERY_WINDOW: u32 = 10;

fn world(relevant: Vec<Vec<VarId>>) -> World {
    let vehicles = vec![
        VehicleSpec { id: VT, pos: Position::new(0.0, 0.0) },
        VehicleSpec { id: VO, pos: Position::new(50.0, 0.0) },
        VehicleSpec { id: VR, pos: Position::new(350.0, 0.0) },
    ];
    let variables = vec![
        ExogenousVariable { id: X1, pos: Position::new(25.0, 0.0) },
        ExogenousVariable { id: X2, pos: Position::new(130.0, 0.0) },
    ];
    let detection = DetectionModelParams { c1: 1.0, c2: 1.0, c3: 100.0, perception_range: 150.0 };
    World::from_parts(400.0, false, vehicles, variables, relevant, 400.0, detection).unwrap()
}

/// x_1 matters to V_O (so V_T reports it) and to V_R.
fn redundancy_world() -> World {
    world(vec![vec![], vec![X1], vec![X1]])
}

/// x_2 matters to V_R only.
fn relevance_world() -> World {
    world(vec![vec![], vec![], vec![X2]])
}

fn channel(world: &World) -> Channel {
    let params = ChannelParams {
        rx_midpoint: 325.0,
        rx_slope: 2.0,
        sense_midpoint: 325.0,
        sense_slope: 2.0,
        interference_gamma: 0.0,
        half_duplex: false,
        ..Default::default()
    };
    Channel::new(ChannelModel::parametric(params), world)
}

/// Everything the three vehicles carry between epochs.
struct Bench {
    world: World,
    channel: Channel,
    grid: ResourceGrid,
    params: PipelineParams,
    rng: RngStreams,
    tx: Vec<TxState>,
    availability: AvailabilityStore,
    recovery: RecoveryTracker,
    events: Vec<CseEvent>,
}

impl Bench {
    fn new(world: World, params: PipelineParams) -> Self {
        Self {
            channel: channel(&world),
            grid: ResourceGrid::default(),
            params,
            rng: RngStreams::new(7),
            tx: vec![TxState::new(); 3],
            availability: AvailabilityStore::new(3, 2, 10),
            recovery: RecoveryTracker::new(RECOVERY_WINDOW),
            events: Vec::new(),
            world,
        }
    }

    /// One epoch in which only `senders` transmit. Returns the messages and
    /// the delivery outcome.
    fn epoch(&mut self, t: u32, senders: &[VehicleId]) -> (Vec<GeneratedMessage>, EpochDelivery) {
        let detections: Vec<Vec<VarId>> = (0..3).map(|v| sample_detections(&self.world, VehicleId(v), t, false, &self.rng)).collect();
        let inputs = PipelineInputs {
            params: &self.params,
            relevance: &self.world.relevance,
            channel: &self.channel,
            grid: &self.grid,
            redundancy_since: t.saturating_sub(REDUNDANCY_WINDOW),
            rng: &self.rng,
        };
        let sent: Vec<GeneratedMessage> = senders
            .iter()
            .map(|&v| generate_message(v, t, &detections[v.idx()], &self.tx[v.idx()], 0.0, &inputs))
            .collect();
        for (v, det) in detections.iter().enumerate() {
            for &x in det {
                self.availability.refresh(VehicleId(v as u32), x, t);
            }
        }
        let transmissions: Vec<Transmission> = sent.iter().map(|m| Transmission { sender: m.sender(), subchannels: m.subchannels }).collect();
        let delivery = simulate_epoch_delivery(&transmissions, &self.channel, &[0.0; 3], &self.grid, t, &self.rng);
        for (m, msg) in sent.iter().enumerate() {
            for r in (0..3).map(VehicleId) {
                if r != msg.sender() && delivery.received(m, r) {
                    for &x in msg.content() {
                        self.availability.refresh(r, x, t);
                    }
                    self.tx[r.idx()].record_decoded(msg.sender(), t, msg.content());
                }
            }
        }
        let refs: Vec<&GeneratedMessage> = sent.iter().collect();
        self.recovery.track(t, &refs, &delivery);
        for (m, msg) in sent.iter().enumerate() {
            let scan = detect_cse(msg, m, &delivery, &self.world.relevance, &self.availability);
            self.events.extend(scan.events.iter().cloned());
            self.recovery.open_events(scan.events);
        }
        (sent, delivery)
    }
}

fn hard() -> PipelineParams {
    PipelineParams { redundancy: RedundancyMode::Hard, beta: 0.0, ..Default::default() }
}

pub fn geometry_is_as_drawn() {
    let w = redundancy_world();
    let rng = RngStreams::new(1);
    for t in 0..50 {
        assert_eq!(sample_detections(&w, VT, t, false, &rng), vec![X1]);
        assert_eq!(sample_detections(&w, VO, t, false, &rng), vec![X1, X2]);
        assert!(sample_detections(&w, VR, t, false, &rng).is_empty());
    }
    let ch = channel(&w);
    assert_eq!(ch.reception(VT, VO, 0.0), 1.0);
    assert_eq!(ch.reception(VO, VR, 0.0), 1.0);
    assert!(ch.reception(VT, VR, 0.0) < 1e-20);
}

pub fn overheard_report_causes_one_redundancy_error() {
    let mut b = Bench::new(redundancy_world(), hard());

    // Epoch 0: empty messages let everyone learn their neighbours.
    b.epoch(0, &[VT, VO, VR]);

    // Epoch 1: V_T reports x_1 for V_O while V_O listens. V_R is out of range.
    let (sent, delivery) = b.epoch(1, &[VT, VR]);
    assert_eq!(sent[0].content(), &[X1]);
    assert!(delivery.received(0, VO));
    assert!(!delivery.received(0, VR));
    assert!(b.events.is_empty());

    // Epoch 2: V_O has overheard x_1 and estimates it redundant for V_R, but
    // V_R never received V_T's message.
    let (sent, delivery) = b.epoch(2, &[VO, VR]);
    let msg = &sent[0];
    assert_eq!(msg.intended(), &[VT, VR]);
    assert_eq!(msg.decision.stage(X1, VR), Some(StageOutcome::ExcludedRedundant));
    assert!(!msg.content().contains(&X1));
    assert!(delivery.received(0, VR));

    assert_eq!(b.events.len(), 1);
    let e = &b.events[0];
    assert_eq!((e.transmitter, e.receiver, e.variable, e.cause, e.epoch), (VO, VR, X1, CseCause::Redundancy, 2));
    assert_eq!((e.attempt_epoch, e.success_epoch), (None, None));

    // Epoch 3: V_O is silent. Epoch 4: the report from epoch 1 has aged out of
    // V_O's redundancy memory, so V_O sends x_1 and V_R receives it.
    b.epoch(3, &[VR]);
    let (sent, _) = b.epoch(4, &[VO]);
    assert!(sent[0].content().contains(&X1));
    assert_eq!(b.events.len(), 1);
    let tracked = &b.recovery.events()[0];
    assert_eq!((tracked.attempt_epoch, tracked.success_epoch), (Some(4), Some(4)));
    assert_eq!(b.recovery.open_count(), 1);
    assert!(b.availability.is_available(VR, X1, 4));
}

pub fn misjudged_relevance_causes_one_relevance_error() {
    // Every relevance estimate flips. x_1 is irrelevant to V_R here, so the
    // flip pulls it in while x_2 is pushed out.
    let mut b = Bench::new(relevance_world(), PipelineParams { beta: 1.0, ..hard() });

    // V_O learns only about V_R: V_T stays silent throughout.
    b.epoch(0, &[VR]);
    let (sent, delivery) = b.epoch(1, &[VO]);
    let msg = &sent[0];
    assert_eq!(msg.intended(), &[VR]);
    assert_eq!(msg.decision.stage(X2, VR), Some(StageOutcome::ExcludedIrrelevant));
    assert_eq!(msg.decision.stage(X1, VR), Some(StageOutcome::Kept));
    assert_eq!(msg.content(), &[X1]);
    assert!(delivery.received(0, VR));

    assert_eq!(b.events.len(), 1);
    let e = &b.events[0];
    assert_eq!((e.transmitter, e.receiver, e.variable, e.cause, e.epoch), (VO, VR, X2, CseCause::Relevance, 1));

    // Nobody transmits x_2 again, so the event closes unrecovered.
    for t in 2..=2 + RECOVERY_WINDOW {
        b.epoch(t, &[VR]);
    }
    let tracked = &b.recovery.events()[0];
    assert_eq!((tracked.attempt_epoch, tracked.success_epoch), (None, None));
    assert_eq!(b.recovery.open_count(), 0);
}
