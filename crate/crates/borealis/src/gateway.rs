//! Transparent relay between the field radio and the backend bus, plus
//! the solar power-station model that can fail and take a site down.
//!
//! The gateway never parses application payloads: uplinks are forwarded
//! as raw bytes and the application layer runs at the backend. There is
//! no uplink buffering while offline; packets in an outage window are
//! lost, which is what the deployment record shows.

use crate::alp::NodeId;
use crate::environment::Site;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;

/// Gateway load at the 12 V bus, amperes.
pub const GATEWAY_LOAD_A: f64 = 0.0215;

/// Power-station bus voltage.
pub const STATION_BUS_V: f64 = 12.0;

/// Advertising-train guard added on top of the node sniff period, ms.
pub const TRAIN_GUARD_MS: u64 = 100;

/// Solar power station: 100 W panel, 100 Ah buffer battery.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerStation {
    pub charge_ah: f64,
    pub capacity_ah: f64,
    pub load_ma: f64,
    pub panel_w: f64,
}

impl Default for PowerStation {
    fn default() -> Self {
        PowerStation {
            charge_ah: 100.0,
            capacity_ah: 100.0,
            load_ma: GATEWAY_LOAD_A * 1000.0,
            panel_w: 100.0,
        }
    }
}

/// Seasonal daily-harvest profile: fraction of nameplate-hours actually
/// harvested, sinusoidal over the year (December minimum, June maximum).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolarProfile {
    pub min_fraction: f64,
    pub max_fraction: f64,
}

impl Default for SolarProfile {
    fn default() -> Self {
        SolarProfile {
            min_fraction: 0.02,
            max_fraction: 0.25,
        }
    }
}

impl SolarProfile {
    /// Mean harvest power over the day, watts.
    pub fn harvest_w(&self, panel_w: f64, day_of_year: f64) -> f64 {
        let mid = (self.min_fraction + self.max_fraction) / 2.0;
        let amp = (self.max_fraction - self.min_fraction) / 2.0;
        let phase = 2.0 * std::f64::consts::PI * (day_of_year - 81.0) / 365.25;
        panel_w * (mid + amp * phase.sin())
    }
}

/// One pending downlink handed to the gateway by the backend. The frame
/// stays in wire form; the gateway does not look inside.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingDownlink {
    pub request_id: u64,
    pub target: NodeId,
    pub frame_bytes: Vec<u8>,
}

/// Relay state for one site.
#[derive(Debug, Clone, PartialEq)]
pub struct GatewayState {
    pub id: NodeId,
    pub site: Site,
    pub position: (f64, f64),
    pub downlink_queue: VecDeque<PendingDownlink>,
    pub power: PowerStation,
    pub antenna_attached: bool,
    pub online: bool,
}

impl GatewayState {
    pub fn new(id: NodeId, site: Site, position: (f64, f64)) -> Self {
        GatewayState {
            id,
            site,
            position,
            downlink_queue: VecDeque::new(),
            power: PowerStation::default(),
            antenna_attached: true,
            online: true,
        }
    }

    fn recompute_online(&mut self) {
        self.online = self.power.charge_ah > 0.0 && self.antenna_attached;
    }

    pub fn set_antenna(&mut self, attached: bool) {
        self.antenna_attached = attached;
        self.recompute_online();
    }

    pub fn fail_power(&mut self) {
        self.power.charge_ah = 0.0;
        self.recompute_online();
    }

    pub fn replace_station_battery(&mut self) {
        self.power.charge_ah = self.power.capacity_ah;
        self.recompute_online();
    }
}

/// One raw uplink on the backend bus.
#[derive(Debug, Clone, PartialEq)]
pub struct BusMessage {
    pub gateway_id: NodeId,
    pub received_at_ms: u64,
    pub rssi_dbm: f64,
    pub raw_frame: Vec<u8>,
}

impl BusMessage {
    /// Broker topic for the optional live bridge.
    pub fn topic(&self, site: Site) -> String {
        format!("site/{}/gw/{}/up", site.label(), self.gateway_id)
    }

    /// Bridge payload: gateway id (8B LE), unix time seconds (4B LE),
    /// RSSI (i16 LE), then the raw frame bytes.
    pub fn to_bridge_payload(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(14 + self.raw_frame.len());
        out.extend_from_slice(&self.gateway_id.0.to_le_bytes());
        out.extend_from_slice(&((self.received_at_ms / 1000) as u32).to_le_bytes());
        out.extend_from_slice(&(self.rssi_dbm.round() as i16).to_le_bytes());
        out.extend_from_slice(&self.raw_frame);
        out
    }

    pub fn from_bridge_payload(bytes: &[u8]) -> Option<BusMessage> {
        if bytes.len() < 14 {
            return None;
        }
        Some(BusMessage {
            gateway_id: NodeId(u64::from_le_bytes(bytes[0..8].try_into().unwrap())),
            received_at_ms: u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as u64 * 1000,
            rssi_dbm: i16::from_le_bytes(bytes[12..14].try_into().unwrap()) as f64,
            raw_frame: bytes[14..].to_vec(),
        })
    }
}

/// On-air advertising train aimed at one node's sniff schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainEmission {
    pub gateway_id: NodeId,
    pub request_id: u64,
    pub target: NodeId,
    pub frame_bytes: Vec<u8>,
    pub start_ms: u64,
    pub duration_ms: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GatewayError {
    #[error("gateway offline (power dead or antenna detached)")]
    Offline,
}

/// Wraps raw frame bytes into a bus message, or drops them when the
/// gateway is offline. The payload is never decoded here.
pub fn forward_uplink(
    gw: &GatewayState,
    frame_bytes: &[u8],
    rssi_dbm: f64,
    now_ms: u64,
) -> Result<BusMessage, GatewayError> {
    if !gw.online {
        return Err(GatewayError::Offline);
    }
    Ok(BusMessage {
        gateway_id: gw.id,
        received_at_ms: now_ms,
        rssi_dbm,
        raw_frame: frame_bytes.to_vec(),
    })
}

/// Starts an advertising train for the queue head. The train must
/// overlap one of the target's sniff wake-ups for delivery.
pub fn start_downlink(
    gw: &GatewayState,
    pending: &PendingDownlink,
    now_ms: u64,
    duration_ms: u64,
) -> Result<TrainEmission, GatewayError> {
    if !gw.online {
        return Err(GatewayError::Offline);
    }
    Ok(TrainEmission {
        gateway_id: gw.id,
        request_id: pending.request_id,
        target: pending.target,
        frame_bytes: pending.frame_bytes.clone(),
        start_ms: now_ms,
        duration_ms,
    })
}

/// Advances the power station by `dt_s` with a given harvest power and
/// recomputes the online flag.
pub fn step_power(gw: &mut GatewayState, dt_s: f64, harvest_w: f64) {
    debug_assert!(dt_s > 0.0 && harvest_w >= 0.0);
    let delta_ah = (harvest_w / STATION_BUS_V - GATEWAY_LOAD_A) * dt_s / 3600.0;
    gw.power.charge_ah = (gw.power.charge_ah + delta_ah).clamp(0.0, gw.power.capacity_ah);
    gw.recompute_online();
}
