//! Declarative scenario description: sites, registries, link and energy
//! parameters, faults, duration, seed.
//!
//! Scenario files are UTF-8 JSON. `load_scenario` parses, validates and
//! materializes every default (node positions, batteries, intervals)
//! into the returned value, so nothing downstream applies hidden
//! defaults.

use crate::alp::{NodeId, SensorKind, MIN_SAMPLING_INTERVAL_S};
use crate::environment::{ClimateParams, LinkModelParams, Site, SiteLayout, Transect};
use crate::gateway::SolarProfile;
use crate::node::EnergyBudget;
use crate::rng::{stream, Purpose};
use chrono::{Datelike, NaiveDate};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use thiserror::Error;

/// One node registry row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: NodeId,
    pub site: Site,
    pub plot: u8,
    pub transect: Transect,
    pub kind: SensorKind,
    /// Meters relative to the site origin; synthesized from the seed
    /// when absent.
    #[serde(default)]
    pub position: Option<(f64, f64)>,
    #[serde(default)]
    pub battery_ah: Option<f64>,
    #[serde(default)]
    pub sampling_interval_s: Option<u32>,
    #[serde(default)]
    pub resolution_bits: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewaySpec {
    pub id: NodeId,
    pub site: Site,
    #[serde(default)]
    pub position: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FaultKind {
    AntennaDetach,
    PowerStationFailure,
    BatteryReplace,
    NodeRelocation,
    SnowBurial,
}

/// One injected fault. `end` is required for window faults
/// (AntennaDetach, PowerStationFailure, SnowBurial) and ignored for the
/// point faults (BatteryReplace, NodeRelocation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub kind: FaultKind,
    pub target: NodeId,
    pub start: NaiveDate,
    #[serde(default)]
    pub end: Option<NaiveDate>,
    /// SnowBurial: extra attenuation, dB (defaults to the link model's
    /// snow peak).
    #[serde(default)]
    pub extra_db: Option<f64>,
    /// NodeRelocation: destination.
    #[serde(default)]
    pub new_position: Option<(f64, f64)>,
    #[serde(default)]
    pub new_site: Option<Site>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub start: NaiveDate,
    /// Exclusive.
    pub end: NaiveDate,
    #[serde(default)]
    pub energy_budget: EnergyBudget,
    #[serde(default)]
    pub link_params: LinkModelParams,
    #[serde(default)]
    pub climate: ClimateParams,
    #[serde(default)]
    pub solar_profile: SolarProfile,
    #[serde(default)]
    pub sites: Vec<SiteLayout>,
    #[serde(default)]
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub gateways: Vec<GatewaySpec>,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    #[serde(default)]
    pub live_bridge: Option<String>,
    /// Record per-event trace rows (memory-heavy; test and short runs).
    #[serde(default)]
    pub record_events: bool,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario: {field}: {message}")]
    Validation { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation {
        field: field.to_string(),
        message: message.into(),
    }
}

impl Scenario {
    pub fn duration_days(&self) -> u32 {
        (self.end - self.start).num_days().max(0) as u32
    }

    pub fn layout_for(&self, site: Site) -> Option<&SiteLayout> {
        self.sites.iter().find(|l| l.site == site)
    }

    /// Validates invariants and materializes defaults in place.
    pub fn materialize(&mut self) -> Result<(), ScenarioError> {
        if self.start >= self.end {
            return Err(invalid("end", "end date must be after start"));
        }
        if self.sites.is_empty() {
            self.sites = SiteLayout::standard();
        }
        let mut ids = HashSet::new();
        for (i, gw) in self.gateways.iter_mut().enumerate() {
            let field = format!("gateways[{i}]");
            if gw.id.0 == 0 {
                return Err(invalid(&field, "id must be nonzero"));
            }
            if !ids.insert(gw.id) {
                return Err(invalid(&field, format!("duplicate id {}", gw.id)));
            }
        }
        let site_has_gateway = |site: Site, gateways: &[GatewaySpec]| {
            gateways.iter().filter(|g| g.site == site).count()
        };
        for (i, gw) in self.gateways.iter().enumerate() {
            if site_has_gateway(gw.site, &self.gateways) != 1 {
                return Err(invalid(
                    &format!("gateways[{i}]"),
                    format!("site {} must have exactly one gateway", gw.site.label()),
                ));
            }
        }
        let sites = self.sites.clone();
        for (i, gw) in self.gateways.iter_mut().enumerate() {
            let layout = sites
                .iter()
                .find(|l| l.site == gw.site)
                .ok_or_else(|| invalid(&format!("gateways[{i}].site"), "no layout for site"))?;
            if gw.position.is_none() {
                gw.position = Some(layout.gateway_position);
            }
        }
        let default_interval = self.energy_budget.sample_period_s as u32;
        let seed = self.seed;
        for (i, node) in self.nodes.iter_mut().enumerate() {
            let field = format!("nodes[{i}]");
            if node.id.0 == 0 {
                return Err(invalid(&field, "id must be nonzero"));
            }
            if !ids.insert(node.id) {
                return Err(invalid(&field, format!("duplicate id {}", node.id)));
            }
            let layout = sites
                .iter()
                .find(|l| l.site == node.site)
                .ok_or_else(|| invalid(&format!("{field}.site"), "no layout for site"))?;
            if node.plot == 0 || node.plot > layout.plot_count {
                return Err(invalid(
                    &format!("{field}.plot"),
                    format!("plot must be in 1..={}", layout.plot_count),
                ));
            }
            if site_has_gateway(node.site, &self.gateways) != 1 {
                return Err(invalid(
                    &format!("{field}.site"),
                    format!("site {} has no gateway", node.site.label()),
                ));
            }
            let interval = node.sampling_interval_s.get_or_insert(default_interval);
            if *interval < MIN_SAMPLING_INTERVAL_S {
                return Err(invalid(
                    &format!("{field}.sampling_interval_s"),
                    format!("below minimum {MIN_SAMPLING_INTERVAL_S}"),
                ));
            }
            let bits = node.resolution_bits.get_or_insert(12);
            if !(9..=12).contains(bits) {
                return Err(invalid(
                    &format!("{field}.resolution_bits"),
                    "must be in 9..=12",
                ));
            }
            node.battery_ah.get_or_insert(19.0);
            if node.position.is_none() {
                node.position = Some(place_node(seed, node.id, layout));
            }
        }
        for (i, fault) in self.faults.iter().enumerate() {
            let field = format!("faults[{i}]");
            if let Some(end) = fault.end {
                if fault.start >= end {
                    return Err(invalid(&format!("{field}.end"), "must be after start"));
                }
            }
            let gateway_target = self.gateways.iter().any(|g| g.id == fault.target);
            let node_target = self.nodes.iter().any(|n| n.id == fault.target);
            let ok = match fault.kind {
                FaultKind::AntennaDetach | FaultKind::PowerStationFailure => gateway_target,
                FaultKind::BatteryReplace | FaultKind::NodeRelocation | FaultKind::SnowBurial => {
                    node_target
                }
                };
            if !ok {
                return Err(invalid(
                    &format!("{field}.target"),
                    format!("unknown target {} for {:?}", fault.target, fault.kind),
                ));
            }
            if matches!(fault.kind, FaultKind::AntennaDetach | FaultKind::PowerStationFailure)
                && fault.end.is_none()
            {
                return Err(invalid(&format!("{field}.end"), "window fault needs an end"));
            }
        }
        // The epoch day-of-year drives the seasonal model.
        self.climate.epoch_day_of_year = self.start.ordinal() as f64;
        Ok(())
    }
}

/// Seeded uniform placement within the site geometry: along the 300 m
/// span at GN 1-3, within the 75 m coverage radius elsewhere. Each node
/// draws from its own stream, so adding a node never moves another.
fn place_node(seed: u64, id: NodeId, layout: &SiteLayout) -> (f64, f64) {
    let mut rng = stream(seed, Purpose::Placement, id.0);
    let (min_r, max_r) = if layout.site == Site::Gn13 {
        (10.0, layout.max_span_m)
    } else {
        (5.0, layout.max_span_m / 2.0)
    };
    let r = min_r + rng.gen::<f64>() * (max_r - min_r);
    let theta = rng.gen::<f64>() * 2.0 * std::f64::consts::PI;
    let (gx, gy) = layout.gateway_position;
    (gx + r * theta.cos(), gy + r * theta.sin())
}

/// Parses and validates a scenario file, materializing all defaults.
pub fn load_scenario(content: &str) -> Result<Scenario, ScenarioError> {
    let mut scenario: Scenario = serde_json::from_str(content)?;
    scenario.materialize()?;
    Ok(scenario)
}

/// Merges one more fault into a validated scenario.
pub fn inject(mut scenario: Scenario, fault: FaultSpec) -> Result<Scenario, ScenarioError> {
    scenario.faults.push(fault);
    scenario.materialize()?;
    Ok(scenario)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> String {
        r#"{
            "seed": 1,
            "start": "2021-04-01",
            "end": "2021-04-02",
            "gateways": [{"id": 901, "site": "GN13"}],
            "nodes": [{"id": 101, "site": "GN13", "plot": 1, "transect": "A", "kind": "SoilTemp"}]
        }"#
        .to_string()
    }

    #[test]
    fn minimal_file_materializes_defaults() {
        let s = load_scenario(&minimal()).unwrap();
        assert_eq!(s.duration_days(), 1);
        assert_eq!(s.sites.len(), 3);
        let n = &s.nodes[0];
        assert!(n.position.is_some());
        assert_eq!(n.battery_ah, Some(19.0));
        assert_eq!(n.sampling_interval_s, Some(900));
        assert_eq!(s.gateways[0].position, Some((0.0, 0.0)));
        assert_eq!(s.climate.epoch_day_of_year, 91.0);
    }

    #[test]
    fn unknown_field_named_in_error() {
        let bad = minimal().replace("\"seed\": 1", "\"seed\": 1, \"sede\": 2");
        let err = load_scenario(&bad).unwrap_err();
        assert!(err.to_string().contains("sede"), "{err}");
    }

    #[test]
    fn empty_and_malformed_files_rejected() {
        assert!(load_scenario("").is_err());
        assert!(load_scenario("{").is_err());
    }

    #[test]
    fn duplicate_id_rejected() {
        let bad = minimal().replace("\"id\": 101", "\"id\": 901");
        let err = load_scenario(&bad).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn interval_below_minimum_rejected() {
        let bad = minimal().replace(
            "\"kind\": \"SoilTemp\"",
            "\"kind\": \"SoilTemp\", \"sampling_interval_s\": 30",
        );
        let err = load_scenario(&bad).unwrap_err();
        assert!(err.to_string().contains("sampling_interval_s"), "{err}");
    }

    #[test]
    fn fault_with_unknown_target_rejected() {
        let mut s = load_scenario(&minimal()).unwrap();
        s.faults.push(FaultSpec {
            kind: FaultKind::AntennaDetach,
            target: NodeId(7777),
            start: NaiveDate::from_ymd_opt(2021, 4, 1).unwrap(),
            end: Some(NaiveDate::from_ymd_opt(2021, 4, 2).unwrap()),
            extra_db: None,
            new_position: None,
            new_site: None,
        });
        assert!(s.materialize().is_err());
    }

    #[test]
    fn placement_is_deterministic_and_in_range() {
        let a = load_scenario(&minimal()).unwrap();
        let b = load_scenario(&minimal()).unwrap();
        assert_eq!(a.nodes[0].position, b.nodes[0].position);
        let (x, y) = a.nodes[0].position.unwrap();
        let r = (x * x + y * y).sqrt();
        assert!((10.0..=300.0).contains(&r), "r = {r}");
    }
}
