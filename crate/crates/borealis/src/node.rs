//! Sensor-node firmware model: periodic sampling and transmission,
//! intermittent low-power downlink sniffing, file-based remote access
//! with dynamic driver dispatch, and per-activity energy accounting
//! against a primary-cell battery.
//!
//! Transitions are pure `(state, event) -> (state, actions)`; the
//! simulation kernel owns every state single-threaded.

use crate::alp::{
    make_sensor_report, AlpFrame, AlpOp, FileId, NodeConfig, NodeId, SensorDataRecord, SensorKind,
    FILE_CONFIG, FILE_SENSOR_DATA,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Receive window dwell after a detected advertising train, ms.
pub const RECEIVE_WINDOW_MS: u64 = 750;

/// Per-activity energy constants and cadence of the default duty cycle.
///
/// The sniff period is calibrated so that one day of wake-ups at
/// 201.13 uJ each drains 18.17 J; the sleep power is likewise solved
/// from the 43.13 J/day share of the budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyBudget {
    /// Energy per acquisition + transmission, joules.
    pub sample_energy_j: f64,
    /// Energy per low-power wake-up, joules.
    pub sniff_energy_j: f64,
    /// Interval between wake-ups, seconds.
    pub sniff_period_s: f64,
    /// Continuous sleep draw, watts.
    pub sleep_power_w: f64,
    /// Default sampling interval, seconds.
    pub sample_period_s: f64,
}

impl Default for EnergyBudget {
    fn default() -> Self {
        EnergyBudget {
            sample_energy_j: 85.16e-3,
            sniff_energy_j: 201.13e-6,
            sniff_period_s: 0.9564,
            sleep_power_w: 499.2e-6,
            sample_period_s: 900.0,
        }
    }
}

impl EnergyBudget {
    pub fn validate(&self) -> Result<(), NodeError> {
        let all = [
            self.sample_energy_j,
            self.sniff_energy_j,
            self.sniff_period_s,
            self.sleep_power_w,
            self.sample_period_s,
        ];
        if all.iter().any(|&v| v <= 0.0 || !v.is_finite()) {
            return Err(NodeError::InvalidBudget);
        }
        Ok(())
    }

    /// Wake-ups per day at the calibrated period.
    pub fn sniffs_per_day(&self) -> u64 {
        (86400.0 / self.sniff_period_s) as u64
    }
}

/// Remaining charge and reported terminal voltage of the primary cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryState {
    /// Joules remaining.
    pub capacity_j: f64,
    /// Capacity when full, joules.
    pub full_capacity_j: f64,
    pub nominal_v: f64,
    /// Cumulative drain since the last replacement, joules.
    pub drained_j: f64,
    /// Reported terminal voltage, millivolts.
    pub voltage_mv: u16,
}

/// LiSOCl2 cells hold a flat voltage and then cliff; fixed monotone
/// piecewise-linear map from fraction remaining to millivolts.
const VOLTAGE_CURVE: [(f64, f64); 5] = [
    (0.0, 2000.0),
    (0.02, 2800.0),
    (0.1, 3400.0),
    (0.5, 3580.0),
    (1.0, 3650.0),
];

fn voltage_mv_for_fraction(fraction: f64) -> u16 {
    let f = fraction.clamp(0.0, 1.0);
    for w in VOLTAGE_CURVE.windows(2) {
        let (f0, v0) = w[0];
        let (f1, v1) = w[1];
        if f <= f1 {
            return (v0 + (v1 - v0) * (f - f0) / (f1 - f0)).round() as u16;
        }
    }
    VOLTAGE_CURVE[4].1 as u16
}

impl BatteryState {
    pub fn new_full(capacity_ah: f64, nominal_v: f64) -> Self {
        let full = capacity_ah * 3600.0 * nominal_v;
        BatteryState {
            capacity_j: full,
            full_capacity_j: full,
            nominal_v,
            drained_j: 0.0,
            voltage_mv: voltage_mv_for_fraction(1.0),
        }
    }

    pub fn is_alive(&self) -> bool {
        self.capacity_j > 0.0
    }

    pub fn fraction_remaining(&self) -> f64 {
        if self.full_capacity_j <= 0.0 {
            0.0
        } else {
            self.capacity_j / self.full_capacity_j
        }
    }
}

/// Removes `energy_j` from the cell, floored at empty, and refreshes the
/// reported voltage from the discharge curve.
pub fn drain(mut battery: BatteryState, energy_j: f64) -> BatteryState {
    debug_assert!(energy_j >= 0.0);
    let taken = energy_j.min(battery.capacity_j);
    battery.capacity_j -= taken;
    battery.drained_j += taken;
    battery.voltage_mv = voltage_mv_for_fraction(battery.fraction_remaining());
    battery
}

/// Duty-cycle phase of the node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodePhase {
    Sleep,
    Sniff,
    SampleAndTransmit,
    ReceiveWindow,
}

/// Full machine state of one sensor node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeState {
    pub id: NodeId,
    pub config: NodeConfig,
    pub phase: NodePhase,
    pub next_sample_at_ms: u64,
    pub next_sniff_at_ms: u64,
    pub counter: u16,
    pub files: BTreeMap<FileId, Vec<u8>>,
    pub battery: BatteryState,
    /// Meters within the site, relative to the site origin.
    pub position: (f64, f64),
    pub error_count: u32,
}

impl NodeState {
    pub fn new(id: NodeId, config: NodeConfig, battery: BatteryState, position: (f64, f64)) -> Self {
        let mut files = BTreeMap::new();
        files.insert(FILE_SENSOR_DATA, vec![0u8; crate::alp::SENSOR_RECORD_LEN]);
        files.insert(FILE_CONFIG, config.to_bytes().to_vec());
        NodeState {
            id,
            config,
            phase: NodePhase::Sleep,
            next_sample_at_ms: 0,
            next_sniff_at_ms: 0,
            counter: 0,
            files,
            battery,
            position,
            error_count: 0,
        }
    }

    fn next_counter(&mut self) -> u16 {
        let c = self.counter;
        self.counter = self.counter.wrapping_add(1);
        c
    }
}

/// One physical reading handed to the node by the environment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EnvReading {
    SoilTempC(f64),
    WaterContentPct(f64),
    AirTempC(f64),
    AmbientC(f64),
}

impl EnvReading {
    fn kind(&self) -> SensorKind {
        match self {
            EnvReading::SoilTempC(_) => SensorKind::SoilTemp,
            EnvReading::WaterContentPct(_) => SensorKind::WaterContent,
            EnvReading::AirTempC(_) => SensorKind::Weather,
            EnvReading::AmbientC(_) => SensorKind::AmbientTRH,
        }
    }

    fn value(&self) -> f64 {
        match *self {
            EnvReading::SoilTempC(v)
            | EnvReading::WaterContentPct(v)
            | EnvReading::AirTempC(v)
            | EnvReading::AmbientC(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeEvent {
    SampleTimer { reading: EnvReading },
    SniffTimer { train_on_air: bool },
    FrameArrival(AlpFrame),
    BatteryReplace,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeAction {
    Transmit(AlpFrame),
    OpenReceiveWindow { until_ms: u64 },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NodeError {
    #[error("environment reading does not match the active sensor kind")]
    SensorMismatch,
    #[error("energy budget fields must be strictly positive")]
    InvalidBudget,
}

/// Driver dispatch: converts a physical reading into the 11-byte record,
/// selected purely by the configured sensor kind.
pub fn sample_sensor(
    state: &NodeState,
    timestamp_s: u32,
    reading: EnvReading,
) -> Result<SensorDataRecord, NodeError> {
    if reading.kind() != state.config.sensor_kind {
        return Err(NodeError::SensorMismatch);
    }
    Ok(SensorDataRecord {
        timestamp: timestamp_s,
        sensor_kind: state.config.sensor_kind,
        value_scaled: crate::alp::scale_value(reading.value()),
        battery_mv: state.battery.voltage_mv,
    })
}

/// Handles one downlink file operation while the receive window is open.
/// Returns the response frame, if any.
pub fn handle_downlink(state: &mut NodeState, frame: &AlpFrame) -> Option<AlpFrame> {
    if !frame.file.is_registered() || !state.files.contains_key(&frame.file) {
        state.error_count += 1;
        return None;
    }
    match frame.op {
        AlpOp::ReadFileRequest => {
            let bytes = &state.files[&frame.file];
            let start = (frame.offset as usize).min(bytes.len());
            let end = if frame.length == 0 {
                bytes.len()
            } else {
                (start + frame.length as usize).min(bytes.len())
            };
            let payload = bytes[start..end].to_vec();
            Some(AlpFrame {
                version: crate::alp::ALP_VERSION,
                origin: state.id,
                counter: state.next_counter(),
                op: AlpOp::ReturnFileData,
                file: frame.file,
                offset: frame.offset,
                length: payload.len() as u16,
                payload,
            })
        }
        AlpOp::WriteFileRequest => {
            if frame.file != FILE_CONFIG {
                // Only the configuration file is remotely writable.
                state.error_count += 1;
                return None;
            }
            match NodeConfig::from_bytes(&frame.payload) {
                Ok(cfg) => {
                    state.config = cfg;
                    state.files.insert(FILE_CONFIG, cfg.to_bytes().to_vec());
                    let payload = state.files[&FILE_CONFIG].clone();
                    Some(AlpFrame {
                        version: crate::alp::ALP_VERSION,
                        origin: state.id,
                        counter: state.next_counter(),
                        op: AlpOp::ReturnFileData,
                        file: FILE_CONFIG,
                        offset: 0,
                        length: payload.len() as u16,
                        payload,
                    })
                }
                Err(_) => {
                    state.error_count += 1;
                    None
                }
            }
        }
        AlpOp::ReturnFileData => {
            state.error_count += 1;
            None
        }
    }
}

/// Advances the node machine by one event. A node with an exhausted
/// battery emits nothing; a battery replacement brings it back.
pub fn node_step(
    state: &mut NodeState,
    event: NodeEvent,
    now_ms: u64,
    budget: &EnergyBudget,
) -> Vec<NodeAction> {
    if let NodeEvent::BatteryReplace = event {
        state.battery = BatteryState::new_full(
            state.battery.full_capacity_j / 3600.0 / state.battery.nominal_v,
            state.battery.nominal_v,
        );
        return Vec::new();
    }
    if !state.battery.is_alive() {
        return Vec::new();
    }
    match event {
        NodeEvent::SampleTimer { reading } => {
            state.phase = NodePhase::SampleAndTransmit;
            let interval_ms = state.config.sampling_interval_s as u64 * 1000;
            state.next_sample_at_ms = now_ms + interval_ms;
            state.battery = drain(state.battery, budget.sample_energy_j);
            let record = match sample_sensor(state, (now_ms / 1000) as u32, reading) {
                Ok(r) => r,
                Err(_) => {
                    state.error_count += 1;
                    state.phase = NodePhase::Sleep;
                    return Vec::new();
                }
            };
            state
                .files
                .insert(FILE_SENSOR_DATA, record.to_bytes().to_vec());
            let frame = make_sensor_report(state.id, state.next_counter(), &record)
                .expect("record serialization is infallible");
            state.phase = NodePhase::Sleep;
            vec![NodeAction::Transmit(frame)]
        }
        NodeEvent::SniffTimer { train_on_air } => {
            state.battery = drain(state.battery, budget.sniff_energy_j);
            if train_on_air && state.battery.is_alive() {
                state.phase = NodePhase::ReceiveWindow;
                vec![NodeAction::OpenReceiveWindow {
                    until_ms: now_ms + RECEIVE_WINDOW_MS,
                }]
            } else {
                state.phase = NodePhase::Sleep;
                Vec::new()
            }
        }
        NodeEvent::FrameArrival(frame) => {
            if state.phase != NodePhase::ReceiveWindow {
                // Not listening; the frame is lost.
                return Vec::new();
            }
            let response = handle_downlink(state, &frame);
            state.phase = NodePhase::Sleep;
            match response {
                Some(r) => vec![NodeAction::Transmit(r)],
                None => Vec::new(),
            }
        }
        NodeEvent::BatteryReplace => unreachable!(),
    }
}
