//! Epoch loop: detection, content generation, congestion gating, channel
//! delivery, state updates and the metrics pass, in that fixed order.

use std::io::{self, Write};

use serde::Serialize;

use crate::channel::{simulate_epoch_delivery, update_cbr, Channel, EpochDelivery, Transmission};
use crate::config::{ConfigError, SimConfig};
use crate::congestion::{gate_message, measure_cr, CrLimitTable, CrTracker, GateDecision};
use crate::metrics::{
    arr_sample, detect_cse, AvailabilityStore, CseEvent, MetricsReport, RebroadcastTracker, RecoveryTracker,
    RecoveryUpdate, RunCounts,
};
use crate::rng::{RngStreams, Stream, StreamDigest};
use crate::scenario::{sample_detections, ScenarioError, VarId, VehicleId, World};
use crate::tx_pipeline::{generate_message, INTENDED_LOOKBACK_EPOCHS, GeneratedMessage, PipelineInputs, StageOutcome, TxState};

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("world generation failed: {0}")]
    Scenario(#[from] ScenarioError),
    #[error("writing run record: {0}")]
    Record(#[from] io::Error),
}

/// Mutable per-vehicle state carried from one epoch to the next.
#[derive(Debug, Clone)]
pub struct EpochState {
    /// Next epoch to run.
    pub epoch: u32,
    pub tx: Vec<TxState>,
    /// CBR measured over the previous epoch.
    pub cbr: Vec<f64>,
    pub cr: Vec<CrTracker>,
    pub availability: AvailabilityStore,
}

impl EpochState {
    pub fn new(world: &World, availability_window: u32) -> Self {
        let n = world.n_vehicles();
        Self {
            epoch: 0,
            tx: vec![TxState::new(); n],
            cbr: vec![0.0; n],
            cr: vec![CrTracker::new(); n],
            availability: AvailabilityStore::new(n, world.n_variables(), availability_window),
        }
    }
}

/// One line of the run record.
#[derive(Debug, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Record<'a> {
    World {
        seed: u64,
        area_side_m: f64,
        vehicles: Vec<[f64; 2]>,
        variables: Vec<[f64; 2]>,
        relevant: Vec<&'a [VarId]>,
    },
    Message {
        epoch: u32,
        sender: VehicleId,
        intended: &'a [VehicleId],
        candidates: &'a [VarId],
        content: &'a [VarId],
        truncated: &'a [VarId],
        /// One character per (candidate, receiver): `k` kept, `r` redundant, `i` irrelevant.
        stages: String,
        bytes: u32,
        subchannels: u32,
    },
    Drop {
        epoch: u32,
        sender: VehicleId,
        cr: f64,
        cbr: f64,
    },
    Delivery {
        epoch: u32,
        sender: VehicleId,
        receiver: VehicleId,
        slot: u32,
    },
    Cse(&'a CseEvent),
    Recovery {
        epoch: u32,
        #[serde(flatten)]
        update: &'a RecoveryUpdate,
    },
}

fn stage_string(msg: &GeneratedMessage) -> String {
    let d = &msg.decision;
    let mut s = String::with_capacity(d.candidates.len() * d.receivers.len());
    for c in 0..d.candidates.len() {
        for r in 0..d.receivers.len() {
            s.push(match d.stage_at(c, r) {
                StageOutcome::Kept => 'k',
                StageOutcome::ExcludedRedundant => 'r',
                StageOutcome::ExcludedIrrelevant => 'i',
            });
        }
    }
    s
}

/// Per-run output.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub seed: u64,
    pub counts: RunCounts,
    pub report: MetricsReport,
    pub events: Vec<CseEvent>,
    pub digests: Vec<(Stream, StreamDigest)>,
}

/// A single simulation run over a fixed world.
pub struct Simulation<'a> {
    config: &'a SimConfig,
    world: World,
    channel: Channel,
    rng: RngStreams,
    limits: CrLimitTable,
    state: EpochState,
    rebroadcast: RebroadcastTracker,
    recovery: RecoveryTracker,
    counts: RunCounts,
    record: Option<&'a mut dyn Write>,
}

impl<'a> Simulation<'a> {
    /// Validate `config` and generate the world for `seed`.
    pub fn new(config: &'a SimConfig, seed: u64) -> Result<Self, EngineError> {
        config.validate()?;
        let rng = RngStreams::new(seed);
        let world = World::generate(&config.scenario, config.n_vehicles, &rng)?;
        Self::with_world(config, world, rng)
    }

    pub fn with_world(config: &'a SimConfig, world: World, rng: RngStreams) -> Result<Self, EngineError> {
        let channel = Channel::new(config.channel_model()?, &world);
        let w_avail = config.availability_window_epochs();
        Ok(Self {
            state: EpochState::new(&world, w_avail),
            rebroadcast: RebroadcastTracker::new(config.redundancy_window_epochs()),
            recovery: RecoveryTracker::new(config.recovery_window_epochs()),
            limits: config.congestion.effective_limits(),
            counts: RunCounts::default(),
            config,
            world,
            channel,
            rng,
            record: None,
        })
    }

    /// Stream every event to `sink` as JSON lines, starting with the world.
    pub fn record_to(&mut self, sink: &'a mut dyn Write) -> Result<(), EngineError> {
        let w = &self.world;
        let line = Record::World {
            seed: self.rng.seed(),
            area_side_m: w.area_side,
            vehicles: w.vehicles.iter().map(|v| [v.pos.x, v.pos.y]).collect(),
            variables: w.variables.iter().map(|x| [x.pos.x, x.pos.y]).collect(),
            relevant: (0..w.n_vehicles()).map(|v| w.relevance.relevant_set(VehicleId(v as u32))).collect(),
        };
        write_record(sink, &line)?;
        self.record = Some(sink);
        Ok(())
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn state(&self) -> &EpochState {
        &self.state
    }

    pub fn rng(&self) -> &RngStreams {
        &self.rng
    }

    fn emit(&mut self, line: &Record<'_>) -> Result<(), EngineError> {
        if let Some(sink) = self.record.as_mut() {
            write_record(sink, line)?;
        }
        Ok(())
    }

    /// Run one epoch.
    pub fn step(&mut self) -> Result<(), EngineError> {
        let cfg = self.config;
        let t = self.state.epoch;
        let n = self.world.n_vehicles();
        let measuring = t >= cfg.warmup_epochs;
        let w_avail = self.state.availability.window();

        // (1) local detections
        let detections: Vec<Vec<VarId>> = (0..n)
            .map(|v| sample_detections(&self.world, VehicleId(v as u32), t, cfg.scenario.persistent_detection, &self.rng))
            .collect();

        // (2) content generation against the state left by epoch t-1
        let inputs = PipelineInputs {
            params: &cfg.pipeline,
            relevance: &self.world.relevance,
            channel: &self.channel,
            grid: &cfg.grid,
            redundancy_since: t.saturating_sub(cfg.redundancy_window_epochs()),
            rng: &self.rng,
        };
        let generated: Vec<GeneratedMessage> = (0..n)
            .map(|v| {
                let id = VehicleId(v as u32);
                generate_message(id, t, &detections[v], &self.state.tx[v], self.state.cbr[v], &inputs)
            })
            .collect();
        for (v, det) in detections.iter().enumerate() {
            for &x in det {
                self.state.availability.refresh(VehicleId(v as u32), x, t);
            }
        }

        // (3) congestion gating
        let mut sent: Vec<GeneratedMessage> = Vec::with_capacity(n);
        let mut used = vec![0u32; n];
        for msg in generated {
            let v = msg.sender().idx();
            let cr = measure_cr(&self.state.cr[v], &cfg.grid);
            let cbr = self.state.cbr[v];
            if measuring {
                self.counts.generated += 1;
            }
            match gate_message(cr, cbr, &self.limits) {
                GateDecision::Transmit => {
                    used[v] = msg.subchannels;
                    sent.push(msg);
                }
                GateDecision::Drop => {
                    if measuring {
                        self.counts.dropped += 1;
                    }
                    self.emit(&Record::Drop { epoch: t, sender: msg.sender(), cr, cbr })?;
                }
            }
        }
        for msg in &sent {
            self.emit(&Record::Message {
                epoch: t,
                sender: msg.sender(),
                intended: msg.intended(),
                candidates: &msg.decision.candidates,
                content: msg.content(),
                truncated: &msg.decision.truncated,
                stages: stage_string(msg),
                bytes: msg.bytes,
                subchannels: msg.subchannels,
            })?;
        }

        // rebroadcasts are judged against what receivers held before this epoch's deliveries
        if measuring {
            self.classify_rebroadcasts(&sent, t);
        }
        for msg in &sent {
            for &x in msg.content() {
                self.rebroadcast.record(msg.sender(), x, t);
            }
        }

        // (4) channel delivery under the CBR each receiver measured last epoch
        let transmissions: Vec<Transmission> =
            sent.iter().map(|m| Transmission { sender: m.sender(), subchannels: m.subchannels }).collect();
        let delivery = simulate_epoch_delivery(&transmissions, &self.channel, &self.state.cbr, &cfg.grid, t, &self.rng);

        // (5) deliveries into availability and transmitter state, in id order
        for (m, msg) in sent.iter().enumerate() {
            let s = msg.sender();
            for r in 0..n {
                let rid = VehicleId(r as u32);
                if r == s.idx() || !delivery.received(m, rid) {
                    continue;
                }
                for &x in msg.content() {
                    self.state.availability.refresh(rid, x, t);
                }
                self.state.tx[r].record_decoded(s, t, msg.content());
                self.state.tx[s.idx()].record_decoded_by(rid, t);
                if self.record.is_some() {
                    let slot = delivery.assignments[m].slot;
                    self.emit(&Record::Delivery { epoch: t, sender: s, receiver: rid, slot })?;
                }
            }
        }

        // (6) CBR and CR
        for v in 0..n {
            self.state.cbr[v] = update_cbr(VehicleId(v as u32), &delivery, &cfg.grid);
            self.state.cr[v].push(used[v]);
        }

        // (7) metrics
        if measuring {
            self.metrics_pass(&sent, &delivery, t)?;
        }

        // The decode ledgers are scanned at every generation, so keep them tight.
        let oldest = t.saturating_sub(cfg.redundancy_window_epochs().max(INTENDED_LOOKBACK_EPOCHS));
        for tx in &mut self.state.tx {
            tx.prune(oldest);
        }
        if t.is_multiple_of(w_avail) {
            self.rebroadcast.prune(t);
        }
        self.state.epoch += 1;
        Ok(())
    }

    fn classify_rebroadcasts(&mut self, sent: &[GeneratedMessage], t: u32) {
        for msg in sent {
            for &x in msg.content() {
                self.counts.transmitted_variables += 1;
                if !self.rebroadcast.is_rebroadcast(msg.sender(), x, t) {
                    continue;
                }
                self.counts.rebroadcasts += 1;
                for r in msg.decision.kept_for(x) {
                    self.counts.rebroadcast_targets += 1;
                    if self.state.availability.is_available(r, x, t) {
                        self.counts.useless_rebroadcast_targets += 1;
                    }
                }
            }
        }
    }

    fn metrics_pass(&mut self, sent: &[GeneratedMessage], delivery: &EpochDelivery, t: u32) -> Result<(), EngineError> {
        let refs: Vec<&GeneratedMessage> = sent.iter().collect();
        let updates = self.recovery.track(t, &refs, delivery);
        for u in &updates {
            self.counts.recovery_attempts += u64::from(u.attempt);
            self.counts.recovery_successes += u64::from(u.success);
            self.emit(&Record::Recovery { epoch: t, update: u })?;
        }

        self.counts.transmitted += sent.len() as u64;
        for (m, msg) in sent.iter().enumerate() {
            self.counts.truncated_variables += msg.decision.truncated.len() as u64;
            let scan = detect_cse(msg, m, delivery, &self.world.relevance, &self.state.availability);
            self.counts.truncation_omissions += u64::from(scan.truncation_omissions);
            if scan.events.is_empty() {
                continue;
            }
            self.counts.messages_with_cse += 1;
            for e in &scan.events {
                self.counts.cse_events += 1;
                match e.cause {
                    crate::metrics::CseCause::Redundancy => self.counts.redundancy_cse += 1,
                    crate::metrics::CseCause::Relevance => self.counts.relevance_cse += 1,
                }
                self.emit(&Record::Cse(e))?;
            }
            self.recovery.open_events(scan.events);
        }

        let n = self.world.n_vehicles();
        for v in 0..n {
            let id = VehicleId(v as u32);
            let (a, r) = arr_sample(id, &self.world.relevance, &self.state.availability, t);
            self.counts.arr_available += a;
            self.counts.arr_relevant += r;
            self.counts.cbr_sum += self.state.cbr[v];
        }
        self.counts.cbr_samples += n as u64;
        self.counts.measurement_epochs += 1;
        Ok(())
    }

    /// Run to the configured horizon and summarise.
    pub fn run(mut self) -> Result<RunOutput, EngineError> {
        while self.state.epoch < self.config.horizon_epochs {
            self.step()?;
        }
        if let Some(sink) = self.record.as_mut() {
            sink.flush()?;
        }
        Ok(self.finish())
    }

    pub fn finish(self) -> RunOutput {
        RunOutput {
            seed: self.rng.seed(),
            report: MetricsReport::finalize(self.counts.clone()),
            counts: self.counts,
            events: self.recovery.events().to_vec(),
            digests: Stream::ALL.iter().map(|&s| (s, self.rng.digest(s))).collect(),
        }
    }
}

fn write_record(sink: &mut dyn Write, line: &Record<'_>) -> Result<(), EngineError> {
    serde_json::to_writer(&mut *sink, line).map_err(io::Error::from)?;
    sink.write_all(b"\n")?;
    Ok(())
}

/// Generate the world for `seed` and run it to the horizon.
pub fn run_simulation(config: &SimConfig, seed: u64, record: Option<&mut dyn Write>) -> Result<RunOutput, EngineError> {
    let mut sim = Simulation::new(config, seed)?;
    if let Some(sink) = record {
        sim.record_to(sink)?;
    }
    sim.run()
}
