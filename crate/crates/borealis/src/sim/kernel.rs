//! Deterministic discrete-event engine. Owns every node, gateway and
//! backend state, advances simulated time over multi-year horizons, and
//! injects the documented faults.
//!
//! Time base is integer milliseconds since the scenario epoch. Events
//! process in (at, seq) order with seq assigned at schedule time, so two
//! runs of the same scenario are bit-identical.
//!
//! Per-sniff wake-ups are only materialized as events while a downlink
//! advertising train is on the air; their energy cost is otherwise
//! drained in a daily lump together with sleep, which keeps a 3-year,
//! 58-node run within a desktop time budget.

use crate::alp::{encode_frame, AlpFrame, FileId, NodeConfig, NodeId, SensorKind};
use crate::backend::{Backend, BackendError, IngestOutcome, RegistryEntry, DOWNLINK_TIMEOUT_MS};
use crate::environment::{
    air_temperature, draw_link, soil_temperature, water_content, SeasonState, Site,
};
use crate::gateway::{
    forward_uplink, start_downlink, step_power, BusMessage, GatewayState, PendingDownlink,
    TRAIN_GUARD_MS,
};
use crate::node::{
    node_step, BatteryState, EnvReading, NodeAction, NodeEvent, NodeState,
};
use crate::rng::{stream, Purpose};
use crate::sim::scenario::{FaultKind, Scenario};
use chrono::NaiveDate;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};

const MS_PER_DAY: u64 = 86_400_000;

/// Propagation plus gateway forwarding latency for one uplink, ms.
const UPLINK_LATENCY_MS: u64 = 20;

/// Turnaround between a detected train and the request frame, ms.
const EXCHANGE_DELAY_MS: u64 = 100;

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    SampleTimer { node: NodeId },
    /// Sniff wake-up materialized under an active advertising train.
    TrainSniff { node: NodeId, request_id: u64 },
    /// Request frame arriving at a node inside its receive window.
    FrameDelivery { node: NodeId, frame: AlpFrame },
    BusDelivery { msg: BusMessage },
    FaultStart { index: usize },
    FaultEnd { index: usize },
    PowerStep { day: u32 },
    Snapshot { day: u32 },
    DownlinkTimeout,
}

#[derive(Debug, Clone)]
struct QueuedEvent {
    at_ms: u64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for QueuedEvent {
    fn eq(&self, other: &Self) -> bool {
        (self.at_ms, self.seq) == (other.at_ms, other.seq)
    }
}
impl Eq for QueuedEvent {}
impl PartialOrd for QueuedEvent {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for QueuedEvent {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at_ms, self.seq).cmp(&(other.at_ms, other.seq))
    }
}

/// Per-event trace row, recorded when `record_events` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TraceRecord {
    FrameOnAir {
        at_ms: u64,
        node: NodeId,
        counter: u16,
        delivered: bool,
    },
    BusDelivery {
        at_ms: u64,
        node: NodeId,
        counter: u16,
        gateway: NodeId,
    },
    TrainStart {
        at_ms: u64,
        request_id: u64,
        target: NodeId,
    },
    TrainSniff {
        at_ms: u64,
        request_id: u64,
        target: NodeId,
        detected: bool,
    },
}

/// Battery telemetry captured at each daily snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatterySnapshot {
    pub node: NodeId,
    pub day: u32,
    pub voltage_mv: u16,
    pub capacity_j: f64,
    pub alive: bool,
}

struct SimNode {
    state: NodeState,
    site: Site,
    plot: u8,
    transect: crate::environment::Transect,
    /// Sniff schedule offset within the sniff period, ms.
    sniff_phase_ms: f64,
    uplink_rng: ChaCha8Rng,
    downlink_rng: ChaCha8Rng,
}

/// First sniff wake-up inside [start, start+duration), if any, for a
/// schedule of `phase + k * period`.
pub fn first_sniff_in_train(
    phase_ms: f64,
    period_ms: f64,
    start_ms: u64,
    duration_ms: u64,
) -> Option<u64> {
    let start = start_ms as f64;
    let k = ((start - phase_ms) / period_ms).ceil().max(0.0);
    let ts = phase_ms + k * period_ms;
    if ts < start + duration_ms as f64 {
        Some((ts.round() as u64).max(start_ms))
    } else {
        None
    }
}

pub struct Kernel {
    pub scenario: Scenario,
    clock_ms: u64,
    end_ms: u64,
    queue: BinaryHeap<Reverse<QueuedEvent>>,
    next_seq: u64,
    nodes: HashMap<NodeId, SimNode>,
    node_order: Vec<NodeId>,
    gateways: HashMap<NodeId, GatewayState>,
    site_gateway: HashMap<Site, NodeId>,
    pub backend: Backend,
    /// Gateways with a failed station battery; held at zero charge.
    power_failed: HashSet<NodeId>,
    node_extra_db: HashMap<NodeId, f64>,
    received: HashMap<(NodeId, u32), u32>,
    expected: HashMap<(NodeId, u32), u32>,
    pub battery_snapshots: Vec<BatterySnapshot>,
    pub trace: Vec<TraceRecord>,
    /// (at, seq) of every processed event, in record mode.
    pub processed: Vec<(u64, u64)>,
    /// Advertising-train duration; defaults to sniff period + guard.
    pub train_duration_ms: u64,
}

impl Kernel {
    pub fn new(mut scenario: Scenario) -> Result<Self, crate::sim::scenario::ScenarioError> {
        scenario.materialize()?;
        let end_ms = scenario.duration_days() as u64 * MS_PER_DAY;
        let seed = scenario.seed;
        let period_ms = scenario.energy_budget.sniff_period_s * 1000.0;

        let mut nodes = HashMap::new();
        let mut node_order = Vec::new();
        let mut registry = Vec::new();
        for spec in &scenario.nodes {
            let config = NodeConfig {
                sensor_kind: spec.kind,
                sampling_interval_s: spec.sampling_interval_s.unwrap(),
                resolution_bits: spec.resolution_bits.unwrap(),
            };
            let battery = BatteryState::new_full(spec.battery_ah.unwrap(), 3.6);
            let state = NodeState::new(spec.id, config, battery, spec.position.unwrap());
            let mut phase_rng = stream(seed, Purpose::SniffPhase, spec.id.0);
            nodes.insert(
                spec.id,
                SimNode {
                    state,
                    site: spec.site,
                    plot: spec.plot,
                    transect: spec.transect,
                    sniff_phase_ms: phase_rng.gen::<f64>() * period_ms,
                    uplink_rng: stream(seed, Purpose::UplinkLink, spec.id.0),
                    downlink_rng: stream(seed, Purpose::DownlinkLink, spec.id.0),
                },
            );
            node_order.push(spec.id);
            registry.push(RegistryEntry {
                node: spec.id,
                site: spec.site,
                plot: spec.plot,
                transect: spec.transect,
                sensor_kind: spec.kind,
            });
        }
        node_order.sort();

        let mut gateways = HashMap::new();
        let mut site_gateway = HashMap::new();
        for spec in &scenario.gateways {
            gateways.insert(
                spec.id,
                GatewayState::new(spec.id, spec.site, spec.position.unwrap()),
            );
            site_gateway.insert(spec.site, spec.id);
        }

        let mut kernel = Kernel {
            clock_ms: 0,
            end_ms,
            queue: BinaryHeap::new(),
            next_seq: 0,
            nodes,
            node_order,
            gateways,
            site_gateway,
            backend: Backend::new(registry),
            power_failed: HashSet::new(),
            node_extra_db: HashMap::new(),
            received: HashMap::new(),
            expected: HashMap::new(),
            battery_snapshots: Vec::new(),
            trace: Vec::new(),
            processed: Vec::new(),
            train_duration_ms: period_ms.ceil() as u64 + TRAIN_GUARD_MS,
            scenario,
        };

        // Fault windows first so same-timestamp boundaries favor the
        // fault transition (a recovered gateway sees the midnight sample).
        for (i, fault) in kernel.scenario.faults.clone().iter().enumerate() {
            let start_ms = kernel.date_ms(fault.start).unwrap_or(0);
            kernel.schedule(start_ms, EventKind::FaultStart { index: i });
            if let Some(end) = fault.end {
                if let Some(end_ms) = kernel.date_ms(end) {
                    kernel.schedule(end_ms, EventKind::FaultEnd { index: i });
                }
            }
        }
        kernel.schedule(0, EventKind::Snapshot { day: 0 });
        if end_ms >= MS_PER_DAY {
            kernel.schedule(MS_PER_DAY, EventKind::PowerStep { day: 0 });
        }
        let ids = kernel.node_order.clone();
        for id in ids {
            kernel.schedule(0, EventKind::SampleTimer { node: id });
        }
        Ok(kernel)
    }

    fn date_ms(&self, date: NaiveDate) -> Option<u64> {
        let days = (date - self.scenario.start).num_days();
        if days < 0 {
            Some(0)
        } else {
            let ms = days as u64 * MS_PER_DAY;
            (ms <= self.end_ms).then_some(ms)
        }
    }

    pub fn now_ms(&self) -> u64 {
        self.clock_ms
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn gateway_count(&self) -> usize {
        self.gateways.len()
    }

    pub fn node_state(&self, id: NodeId) -> Option<&NodeState> {
        self.nodes.get(&id).map(|n| &n.state)
    }

    pub fn node_distance_m(&self, id: NodeId) -> Option<f64> {
        let node = self.nodes.get(&id)?;
        let gw = self.gateways.get(self.site_gateway.get(&node.site)?)?;
        let (dx, dy) = (
            node.state.position.0 - gw.position.0,
            node.state.position.1 - gw.position.1,
        );
        Some((dx * dx + dy * dy).sqrt())
    }

    fn schedule(&mut self, at_ms: u64, kind: EventKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(QueuedEvent { at_ms, seq, kind }));
    }

    fn season(&self, at_ms: u64) -> SeasonState {
        SeasonState::at(&self.scenario.climate, at_ms as f64 / 1000.0)
    }

    fn reading_for(&self, node: &SimNode, at_ms: u64) -> EnvReading {
        let t_s = at_ms as f64 / 1000.0;
        let seed = self.scenario.seed;
        let climate = &self.scenario.climate;
        match node.state.config.sensor_kind {
            SensorKind::SoilTemp => EnvReading::SoilTempC(soil_temperature(
                seed,
                node.site,
                node.plot,
                node.transect,
                t_s,
                climate,
            )),
            SensorKind::WaterContent => {
                EnvReading::WaterContentPct(water_content(seed, node.site, node.plot, t_s, climate))
            }
            SensorKind::Weather => {
                EnvReading::AirTempC(air_temperature(seed, node.site, t_s, climate))
            }
            SensorKind::AmbientTRH => {
                EnvReading::AmbientC(air_temperature(seed, node.site, t_s, climate))
            }
        }
    }

    /// Transmits one node frame over the uplink: link draw, then relay.
    fn handle_transmit(&mut self, node_id: NodeId, frame: &AlpFrame, at_ms: u64) {
        let season = self.season(at_ms);
        let node = self.nodes.get_mut(&node_id).expect("known node");
        let site = node.site;
        let extra_db = self.node_extra_db.get(&node_id).copied().unwrap_or(0.0);
        let gw_id = match self.site_gateway.get(&site) {
            Some(id) => *id,
            None => return,
        };
        let gw = &self.gateways[&gw_id];
        let (dx, dy) = (
            node.state.position.0 - gw.position.0,
            node.state.position.1 - gw.position.1,
        );
        let distance = (dx * dx + dy * dy).sqrt();
        let (delivered_air, rssi) = draw_link(
            &mut node.uplink_rng,
            distance,
            &season,
            &self.scenario.link_params,
            site,
            extra_db,
        );
        let counter = frame.counter;
        let bytes = encode_frame(frame).expect("node frames are valid");
        let delivered = delivered_air
            && match forward_uplink(gw, &bytes, rssi, at_ms + UPLINK_LATENCY_MS) {
                Ok(msg) => {
                    self.schedule(at_ms + UPLINK_LATENCY_MS, EventKind::BusDelivery { msg });
                    true
                }
                Err(_) => false,
            };
        if self.scenario.record_events {
            self.trace.push(TraceRecord::FrameOnAir {
                at_ms,
                node: node_id,
                counter,
                delivered,
            });
        }
    }

    /// Queues a file read and dispatches it to the site gateway.
    pub fn issue_query(&mut self, target: NodeId, file: FileId) -> Result<u64, BackendError> {
        let id = self.backend.query_node(target, file, self.clock_ms)?;
        self.schedule(
            self.clock_ms + DOWNLINK_TIMEOUT_MS + 1,
            EventKind::DownlinkTimeout,
        );
        self.dispatch_downlinks();
        Ok(id)
    }

    /// Queues a configuration write and dispatches it.
    pub fn issue_config_update(
        &mut self,
        target: NodeId,
        cfg: &NodeConfig,
    ) -> Result<u64, BackendError> {
        let id = self.backend.update_config(target, cfg, self.clock_ms)?;
        self.schedule(
            self.clock_ms + DOWNLINK_TIMEOUT_MS + 1,
            EventKind::DownlinkTimeout,
        );
        self.dispatch_downlinks();
        Ok(id)
    }

    fn dispatch_downlinks(&mut self) {
        while let Some((_, target)) = self.backend.peek_queued() {
            let Some(node) = self.nodes.get(&target) else {
                break;
            };
            let gw_id = self.site_gateway[&node.site];
            if !self.gateways[&gw_id].online {
                // Stays queued until the gateway recovers or the
                // request times out.
                break;
            }
            let (request_id, target, bytes) = self.backend.pop_queued().expect("peeked");
            let pending = PendingDownlink {
                request_id,
                target,
                frame_bytes: bytes,
            };
            let train =
                start_downlink(&self.gateways[&gw_id], &pending, self.clock_ms, self.train_duration_ms)
                    .expect("gateway checked online");
            if self.scenario.record_events {
                self.trace.push(TraceRecord::TrainStart {
                    at_ms: train.start_ms,
                    request_id,
                    target,
                });
            }
            let node = &self.nodes[&target];
            let period_ms = self.scenario.energy_budget.sniff_period_s * 1000.0;
            if let Some(ts) = first_sniff_in_train(
                node.sniff_phase_ms,
                period_ms,
                train.start_ms,
                train.duration_ms,
            ) {
                self.schedule(
                    ts,
                    EventKind::TrainSniff {
                        node: target,
                        request_id,
                    },
                );
                // The request frame follows one exchange turnaround
                // after the detected wake-up (delivery still subject to
                // the downlink draw at the sniff instant).
                let frame = crate::alp::decode_frame(&pending.frame_bytes).expect("valid request");
                self.schedule(
                    ts + EXCHANGE_DELAY_MS,
                    EventKind::FrameDelivery {
                        node: target,
                        frame,
                    },
                );
            }
        }
    }

    fn process(&mut self, event: QueuedEvent) {
        let at_ms = event.at_ms;
        self.clock_ms = at_ms;
        if self.scenario.record_events {
            self.processed.push((event.at_ms, event.seq));
        }
        match event.kind {
            EventKind::SampleTimer { node: node_id } => {
                let reading = {
                    let node = &self.nodes[&node_id];
                    self.reading_for(node, at_ms)
                };
                let budget = self.scenario.energy_budget;
                let node = self.nodes.get_mut(&node_id).unwrap();
                let interval_ms = node.state.config.sampling_interval_s as u64 * 1000;
                let actions = node_step(
                    &mut node.state,
                    NodeEvent::SampleTimer { reading },
                    at_ms,
                    &budget,
                );
                // The timer stays alive for dead nodes so a battery
                // replacement resumes sampling without rescheduling.
                let next = if node.state.battery.is_alive() {
                    node.state.next_sample_at_ms
                } else {
                    at_ms + interval_ms
                };
                if next < self.end_ms {
                    self.schedule(next, EventKind::SampleTimer { node: node_id });
                }
                for action in actions {
                    if let NodeAction::Transmit(frame) = action {
                        self.handle_transmit(node_id, &frame, at_ms);
                    }
                }
            }
            EventKind::TrainSniff { node: node_id, request_id } => {
                let budget = self.scenario.energy_budget;
                let season = self.season(at_ms);
                let extra_db = self.node_extra_db.get(&node_id).copied().unwrap_or(0.0);
                let link = self.scenario.link_params;
                let Some(node) = self.nodes.get_mut(&node_id) else {
                    return;
                };
                let site = node.site;
                let gw = &self.gateways[&self.site_gateway[&site]];
                let (dx, dy) = (
                    node.state.position.0 - gw.position.0,
                    node.state.position.1 - gw.position.1,
                );
                let distance = (dx * dx + dy * dy).sqrt();
                let (detected, _) =
                    draw_link(&mut node.downlink_rng, distance, &season, &link, site, extra_db);
                node_step(
                    &mut node.state,
                    NodeEvent::SniffTimer {
                        train_on_air: detected,
                    },
                    at_ms,
                    &budget,
                );
                if self.scenario.record_events {
                    self.trace.push(TraceRecord::TrainSniff {
                        at_ms,
                        request_id,
                        target: node_id,
                        detected,
                    });
                }
            }
            EventKind::FrameDelivery { node: node_id, frame } => {
                let budget = self.scenario.energy_budget;
                let actions = {
                    let node = self.nodes.get_mut(&node_id).unwrap();
                    node_step(&mut node.state, NodeEvent::FrameArrival(frame), at_ms, &budget)
                };
                for action in actions {
                    if let NodeAction::Transmit(response) = action {
                        self.handle_transmit(node_id, &response, at_ms);
                    }
                }
            }
            EventKind::BusDelivery { msg } => {
                let gateway = msg.gateway_id;
                match self.backend.ingest(&msg) {
                    Ok(IngestOutcome::Measurement(m)) => {
                        let day = m.sampled_at / 86400;
                        *self.received.entry((m.node, day)).or_insert(0) += 1;
                        if self.scenario.record_events {
                            self.trace.push(TraceRecord::BusDelivery {
                                at_ms,
                                node: m.node,
                                counter: 0,
                                gateway,
                            });
                        }
                    }
                    Ok(_) | Err(_) => {}
                }
            }
            EventKind::FaultStart { index } => self.apply_fault(index, true),
            EventKind::FaultEnd { index } => self.apply_fault(index, false),
            EventKind::PowerStep { day } => {
                let doy = self.scenario.climate.epoch_day_of_year + day as f64;
                let profile = self.scenario.solar_profile;
                let mut ids: Vec<NodeId> = self.gateways.keys().copied().collect();
                ids.sort();
                for id in ids {
                    let failed = self.power_failed.contains(&id);
                    let gw = self.gateways.get_mut(&id).unwrap();
                    if failed {
                        gw.fail_power();
                    } else {
                        let harvest = profile.harvest_w(gw.power.panel_w, doy);
                        step_power(gw, 86_400.0, harvest);
                    }
                }
                let next = (day as u64 + 2) * MS_PER_DAY;
                if next <= self.end_ms {
                    self.schedule(next, EventKind::PowerStep { day: day + 1 });
                }
            }
            EventKind::Snapshot { day } => {
                let budget = self.scenario.energy_budget;
                let daily_idle = budget.sniff_energy_j * budget.sniffs_per_day() as f64
                    + budget.sleep_power_w * 86_400.0;
                let last_day = (self.end_ms / MS_PER_DAY) as u32;
                for id in self.node_order.clone() {
                    let node = self.nodes.get_mut(&id).unwrap();
                    if day > 0 && node.state.battery.is_alive() {
                        node.state.battery = crate::node::drain(node.state.battery, daily_idle);
                    }
                    self.battery_snapshots.push(BatterySnapshot {
                        node: id,
                        day,
                        voltage_mv: node.state.battery.voltage_mv,
                        capacity_j: node.state.battery.capacity_j,
                        alive: node.state.battery.is_alive(),
                    });
                    if day < last_day {
                        let expected = 86_400 / node.state.config.sampling_interval_s;
                        self.expected.insert((id, day), expected);
                    }
                }
                if (day as u64 + 1) * MS_PER_DAY <= self.end_ms {
                    self.schedule((day as u64 + 1) * MS_PER_DAY, EventKind::Snapshot { day: day + 1 });
                }
            }
            EventKind::DownlinkTimeout => {
                self.backend.expire_stale(at_ms);
            }
        }
    }

    fn apply_fault(&mut self, index: usize, starting: bool) {
        let fault = self.scenario.faults[index].clone();
        match fault.kind {
            FaultKind::AntennaDetach => {
                if let Some(gw) = self.gateways.get_mut(&fault.target) {
                    gw.set_antenna(!starting);
                }
            }
            FaultKind::PowerStationFailure => {
                if let Some(gw) = self.gateways.get_mut(&fault.target) {
                    if starting {
                        self.power_failed.insert(fault.target);
                        gw.fail_power();
                    } else {
                        self.power_failed.remove(&fault.target);
                        gw.replace_station_battery();
                    }
                }
            }
            FaultKind::BatteryReplace => {
                if starting {
                    if let Some(node) = self.nodes.get_mut(&fault.target) {
                        let budget = self.scenario.energy_budget;
                        node_step(
                            &mut node.state,
                            NodeEvent::BatteryReplace,
                            self.clock_ms,
                            &budget,
                        );
                    }
                }
            }
            FaultKind::NodeRelocation => {
                if starting {
                    if let Some(node) = self.nodes.get_mut(&fault.target) {
                        if let Some(pos) = fault.new_position {
                            node.state.position = pos;
                        }
                        if let Some(site) = fault.new_site {
                            node.site = site;
                        }
                    }
                }
            }
            FaultKind::SnowBurial => {
                if starting {
                    let extra = fault
                        .extra_db
                        .unwrap_or(self.scenario.link_params.snow_peak_db);
                    self.node_extra_db.insert(fault.target, extra);
                } else {
                    self.node_extra_db.remove(&fault.target);
                }
            }
        }
        // A recovered gateway can pick up requests still queued.
        if !starting {
            self.dispatch_downlinks();
        }
    }

    /// Processes all events up to and including `until_ms`.
    pub fn run_until(&mut self, until_ms: u64) {
        while let Some(Reverse(head)) = self.queue.peek() {
            if head.at_ms > until_ms {
                break;
            }
            let Reverse(event) = self.queue.pop().unwrap();
            self.process(event);
        }
        self.clock_ms = self.clock_ms.max(until_ms);
    }

    /// Runs to the scenario end and returns the outputs.
    pub fn finish(mut self) -> RunOutput {
        self.run_until(self.end_ms);
        let mut counts: Vec<(NodeId, u32, u32, u32)> = self
            .expected
            .iter()
            .map(|(&(node, day), &expected)| {
                let received = self.received.get(&(node, day)).copied().unwrap_or(0);
                (node, day, received, expected)
            })
            .collect();
        counts.sort();
        let prr = crate::analytics::PrrReport::from_counts(self.scenario.start, counts)
            .expect("expected counts are positive");
        let mut battery = self.battery_snapshots;
        battery.sort_by_key(|s| (s.node, s.day));
        RunOutput {
            scenario: self.scenario,
            backend: self.backend,
            prr,
            battery,
            trace: self.trace,
            processed: self.processed,
        }
    }
}

/// Everything a finished run produces.
pub struct RunOutput {
    pub scenario: Scenario,
    pub backend: Backend,
    pub prr: crate::analytics::PrrReport,
    pub battery: Vec<BatterySnapshot>,
    pub trace: Vec<TraceRecord>,
    pub processed: Vec<(u64, u64)>,
}

/// Validates, runs and collects a scenario in one call.
pub fn run(scenario: Scenario) -> Result<RunOutput, crate::sim::scenario::ScenarioError> {
    Ok(Kernel::new(scenario)?.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alp::{SensorKind, FILE_CONFIG, FILE_SENSOR_DATA};
    use crate::backend::RequestState;
    use crate::environment::{ClimateParams, LinkModelParams, Transect};
    use crate::gateway::SolarProfile;
    use crate::node::EnergyBudget;
    use crate::sim::scenario::{GatewaySpec, NodeSpec};

    fn one_node_scenario() -> Scenario {
        Scenario {
            seed: 1,
            start: NaiveDate::from_ymd_opt(2021, 4, 1).unwrap(),
            end: NaiveDate::from_ymd_opt(2021, 4, 2).unwrap(),
            energy_budget: EnergyBudget::default(),
            link_params: LinkModelParams::lossless(),
            climate: ClimateParams {
                noise_sigma_c: 0.0,
                ..Default::default()
            },
            solar_profile: SolarProfile::default(),
            sites: Vec::new(),
            nodes: vec![NodeSpec {
                id: NodeId(101),
                site: crate::environment::Site::Gn13,
                plot: 1,
                transect: Transect::A,
                kind: SensorKind::SoilTemp,
                position: Some((50.0, 0.0)),
                battery_ah: None,
                sampling_interval_s: None,
                resolution_bits: None,
            }],
            gateways: vec![GatewaySpec {
                id: NodeId(901),
                site: crate::environment::Site::Gn13,
                position: None,
            }],
            faults: Vec::new(),
            live_bridge: None,
            record_events: true,
        }
    }

    #[test]
    fn lossless_day_yields_96_measurements() {
        let out = run(one_node_scenario()).unwrap();
        assert_eq!(out.backend.store.len(), 96);
        assert_eq!(out.prr.rows.len(), 1);
        assert_eq!(out.prr.rows[0].received, 96);
        assert_eq!(out.prr.rows[0].expected, 96);
        assert_eq!(out.prr.rows[0].prr_percent, 100.0);
    }

    #[test]
    fn processed_events_stay_in_order() {
        let out = run(one_node_scenario()).unwrap();
        assert!(out.processed.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn identical_scenarios_are_bit_identical() {
        let a = run(one_node_scenario()).unwrap();
        let b = run(one_node_scenario()).unwrap();
        let ea = crate::backend::export(
            &a.backend.store,
            &Default::default(),
            crate::backend::ExportFormat::Csv,
        );
        let eb = crate::backend::export(
            &b.backend.store,
            &Default::default(),
            crate::backend::ExportFormat::Csv,
        );
        assert_eq!(ea, eb);
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.battery, b.battery);
    }

    #[test]
    fn query_is_answered_within_one_train() {
        let mut kernel = Kernel::new(one_node_scenario()).unwrap();
        kernel.run_until(10 * 60 * 1000);
        let id = kernel.issue_query(NodeId(101), FILE_SENSOR_DATA).unwrap();
        kernel.run_until(11 * 60 * 1000);
        let req = kernel.backend.request(id).unwrap();
        assert_eq!(req.state, RequestState::Answered);
        assert!(req.answer.is_some());
    }

    #[test]
    fn config_update_halves_next_day_cadence() {
        let mut scenario = one_node_scenario();
        scenario.end = NaiveDate::from_ymd_opt(2021, 4, 3).unwrap();
        let mut kernel = Kernel::new(scenario).unwrap();
        kernel.run_until(6 * 3600 * 1000);
        let cfg = NodeConfig {
            sensor_kind: SensorKind::SoilTemp,
            sampling_interval_s: 1800,
            resolution_bits: 12,
        };
        let id = kernel.issue_config_update(NodeId(101), &cfg).unwrap();
        kernel.run_until(7 * 3600 * 1000);
        assert_eq!(
            kernel.backend.request(id).unwrap().state,
            RequestState::Answered
        );
        let out = kernel.finish();
        let day1 = out.prr.rows.iter().find(|r| r.day == 1).unwrap();
        assert_eq!(day1.expected, 48);
        assert_eq!(day1.received, 48);
    }

    #[test]
    fn offline_gateway_expires_the_request() {
        let mut scenario = one_node_scenario();
        scenario.faults.push(crate::sim::scenario::FaultSpec {
            kind: FaultKind::AntennaDetach,
            target: NodeId(901),
            start: scenario.start,
            end: Some(scenario.end),
            extra_db: None,
            new_position: None,
            new_site: None,
        });
        let mut kernel = Kernel::new(scenario).unwrap();
        kernel.run_until(3600 * 1000);
        let id = kernel.issue_query(NodeId(101), FILE_CONFIG).unwrap();
        let out_state = {
            kernel.run_until(3600 * 1000 + 2 * DOWNLINK_TIMEOUT_MS);
            kernel.backend.request(id).unwrap().state
        };
        assert_eq!(out_state, RequestState::Expired);
        let out = kernel.finish();
        assert_eq!(out.backend.store.len(), 0);
        assert_eq!(out.prr.rows[0].received, 0);
    }

    #[test]
    fn sniff_train_overlap_arithmetic() {
        assert_eq!(first_sniff_in_train(100.0, 1000.0, 0, 1100), Some(100));
        assert_eq!(first_sniff_in_train(100.0, 1000.0, 150, 1000), Some(1100));
        assert_eq!(first_sniff_in_train(100.0, 1000.0, 150, 500), None);
        // Train longer than a period always overlaps.
        for phase in [0.0, 1.0, 499.9, 999.9] {
            assert!(first_sniff_in_train(phase, 1000.0, 12345, 1100).is_some());
        }
    }

    #[test]
    fn battery_replace_restores_sampling() {
        let mut scenario = one_node_scenario();
        scenario.end = NaiveDate::from_ymd_opt(2021, 4, 4).unwrap();
        // 73 J: a full first day, death partway through the second
        // (after its idle lump), and a fresh cell carries the third.
        scenario.nodes[0].battery_ah = Some(73.0 / 3600.0 / 3.6);
        scenario.faults.push(crate::sim::scenario::FaultSpec {
            kind: FaultKind::BatteryReplace,
            target: NodeId(101),
            start: NaiveDate::from_ymd_opt(2021, 4, 3).unwrap(),
            end: None,
            extra_db: None,
            new_position: None,
            new_site: None,
        });
        let out = run(scenario).unwrap();
        let day0 = out.prr.rows.iter().find(|r| r.day == 0).unwrap();
        let day1 = out.prr.rows.iter().find(|r| r.day == 1).unwrap();
        let day2 = out.prr.rows.iter().find(|r| r.day == 2).unwrap();
        assert_eq!(day0.received, 96, "day0 {day0:?}");
        assert!(day1.received > 0 && day1.received < 96, "day1 {day1:?}");
        assert_eq!(day2.received, 96, "day2 {day2:?}");
    }
}
