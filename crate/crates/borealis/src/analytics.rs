//! Quantitative results over simulation output: packet-reception-ratio
//! series, the daily energy budget, lifetime projection with battery
//! derating, and per-transect temperature aggregates.
//!
//! Everything operates on immutable snapshots and is safe to evaluate
//! in parallel.

use crate::alp::{NodeId, SensorKind};
use crate::backend::TimeSeriesStore;
use crate::environment::Transect;
use crate::node::EnergyBudget;
use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnalyticsError {
    #[error("expected packet count is zero")]
    ZeroExpected,
    #[error("no data in the requested window")]
    EmptyWindow,
    #[error("average current must be positive")]
    NonPositiveCurrent,
}

/// Daily PRR as a percentage. Received counts above expected (duplicate
/// deliveries surviving dedup) are clamped and flagged by the caller.
pub fn daily_prr(received: u32, expected: u32) -> Result<f64, AnalyticsError> {
    if expected == 0 {
        return Err(AnalyticsError::ZeroExpected);
    }
    Ok(100.0 * received.min(expected) as f64 / expected as f64)
}

/// One node-day of the PRR report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DailyPrr {
    pub node: NodeId,
    /// Days since scenario start.
    pub day: u32,
    pub received: u32,
    pub expected: u32,
    pub prr_percent: f64,
    /// Received exceeded expected before clamping.
    pub anomaly: bool,
}

/// Per-node per-day PRR rows plus the scenario start date used for
/// calendar-month grouping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrrReport {
    pub start_date: NaiveDate,
    pub rows: Vec<DailyPrr>,
}

impl PrrReport {
    pub fn from_counts(
        start_date: NaiveDate,
        counts: impl IntoIterator<Item = (NodeId, u32, u32, u32)>,
    ) -> Result<Self, AnalyticsError> {
        let mut rows = Vec::new();
        for (node, day, received, expected) in counts {
            rows.push(DailyPrr {
                node,
                day,
                received,
                expected,
                prr_percent: daily_prr(received, expected)?,
                anomaly: received > expected,
            });
        }
        Ok(PrrReport { start_date, rows })
    }

    pub fn date_of(&self, day: u32) -> NaiveDate {
        self.start_date + Duration::days(day as i64)
    }

    /// Arithmetic mean of daily PRR for one node over one calendar
    /// month. Full-outage days are rows with zero received and count as
    /// zero, which keeps outage months visible in the series.
    pub fn monthly_prr(&self, node: NodeId, year: i32, month: u32) -> Result<f64, AnalyticsError> {
        let days: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| {
                let d = self.date_of(r.day);
                r.node == node && d.year() == year && d.month() == month
            })
            .map(|r| r.prr_percent)
            .collect();
        if days.is_empty() {
            return Err(AnalyticsError::EmptyWindow);
        }
        Ok(days.iter().sum::<f64>() / days.len() as f64)
    }

    /// Monthly series for one node, chronological.
    pub fn monthly_series(&self, node: NodeId) -> Vec<(i32, u32, f64)> {
        let mut months: BTreeMap<(i32, u32), (f64, u32)> = BTreeMap::new();
        for r in self.rows.iter().filter(|r| r.node == node) {
            let d = self.date_of(r.day);
            let e = months.entry((d.year(), d.month())).or_insert((0.0, 0));
            e.0 += r.prr_percent;
            e.1 += 1;
        }
        months
            .into_iter()
            .map(|((y, m), (sum, n))| (y, m, sum / n as f64))
            .collect()
    }

    /// Overall average daily PRR for one node.
    pub fn node_overall(&self, node: NodeId) -> Option<f64> {
        let days: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.node == node)
            .map(|r| r.prr_percent)
            .collect();
        if days.is_empty() {
            None
        } else {
            Some(days.iter().sum::<f64>() / days.len() as f64)
        }
    }

    pub fn nodes(&self) -> Vec<NodeId> {
        let mut ids: Vec<NodeId> = self.rows.iter().map(|r| r.node).collect();
        ids.sort();
        ids.dedup();
        ids
    }

    /// nodes x days matrix as CSV, one row per node.
    pub fn daily_matrix_csv(&self) -> String {
        let nodes = self.nodes();
        let max_day = self.rows.iter().map(|r| r.day).max().unwrap_or(0);
        let mut out = String::from("node");
        for d in 0..=max_day {
            out.push_str(&format!(",day{d}"));
        }
        out.push('\n');
        let mut grid: BTreeMap<(NodeId, u32), f64> = BTreeMap::new();
        for r in &self.rows {
            grid.insert((r.node, r.day), r.prr_percent);
        }
        for node in nodes {
            out.push_str(&node.to_string());
            for d in 0..=max_day {
                match grid.get(&(node, d)) {
                    Some(p) => out.push_str(&format!(",{p:.2}")),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Daily energy decomposition of one duty cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub sleep_j: f64,
    pub sniff_j: f64,
    pub sample_j: f64,
    pub total_j: f64,
}

/// Closed-form daily energy: per-activity cost times daily activity
/// count, plus the continuous sleep draw. A period longer than a day
/// contributes nothing.
pub fn daily_energy(budget: &EnergyBudget) -> EnergyBreakdown {
    let samples = (86400.0 / budget.sample_period_s).floor();
    let sniffs = (86400.0 / budget.sniff_period_s).floor();
    let sample_j = budget.sample_energy_j * samples;
    let sniff_j = budget.sniff_energy_j * sniffs;
    let sleep_j = budget.sleep_power_w * 86400.0;
    EnergyBreakdown {
        sleep_j,
        sniff_j,
        sample_j,
        total_j: sleep_j + sniff_j + sample_j,
    }
}

/// Capacity-derating surface of the LiSOCl2 cell, anchored at the two
/// datasheet points the deployment record quotes: full 19 Ah at
/// (20 mA, 20 C) and about 11 Ah at (2 mA, 20 C).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatteryModel {
    pub rated_ah: f64,
    pub nominal_v: f64,
    /// Reference discharge current for full capacity, amperes.
    pub ref_current_a: f64,
    /// Low-current anchor, amperes.
    pub low_current_a: f64,
    /// Achievable capacity at the low-current anchor, ampere-hours.
    pub low_current_ah: f64,
    /// Fractional capacity loss per degree below the reference, 1/C.
    pub temp_slope_per_c: f64,
    pub ref_temp_c: f64,
    /// Temperature factor floor.
    pub min_temp_factor: f64,
}

impl Default for BatteryModel {
    fn default() -> Self {
        BatteryModel {
            rated_ah: 19.0,
            nominal_v: 3.6,
            ref_current_a: 0.020,
            low_current_a: 0.002,
            low_current_ah: 11.0,
            temp_slope_per_c: 0.005,
            ref_temp_c: 20.0,
            min_temp_factor: 0.4,
        }
    }
}

/// Achievable capacity: rated x f_I x f_T. f_I interpolates
/// log-linearly in current between the two anchors and clamps outside
/// them; f_T falls linearly below the reference temperature with a
/// floor.
pub fn derated_capacity(
    model: &BatteryModel,
    avg_current_a: f64,
    mean_temp_c: f64,
) -> Result<f64, AnalyticsError> {
    if avg_current_a <= 0.0 {
        return Err(AnalyticsError::NonPositiveCurrent);
    }
    let low_fraction = model.low_current_ah / model.rated_ah;
    let f_i = if avg_current_a >= model.ref_current_a {
        1.0
    } else if avg_current_a <= model.low_current_a {
        low_fraction
    } else {
        let span = model.ref_current_a.ln() - model.low_current_a.ln();
        let pos = (model.ref_current_a.ln() - avg_current_a.ln()) / span;
        low_fraction.powf(pos)
    };
    let f_t = (1.0 - model.temp_slope_per_c * (model.ref_temp_c - mean_temp_c).max(0.0))
        .max(model.min_temp_factor);
    Ok(model.rated_ah * f_i * f_t)
}

/// Lifetime with the full rated capacity available.
pub fn ideal_lifetime_years(budget: &EnergyBudget, rated_ah: f64, nominal_v: f64) -> f64 {
    let total = daily_energy(budget).total_j;
    rated_ah * 3600.0 * nominal_v / total / 365.25
}

/// Lifetime with the capacity derated for the budget's own average
/// current and the given mean temperature.
pub fn lifetime_projection(
    budget: &EnergyBudget,
    model: &BatteryModel,
    mean_temp_c: f64,
) -> Result<f64, AnalyticsError> {
    let total = daily_energy(budget).total_j;
    let avg_current_a = total / 86400.0 / model.nominal_v;
    let cap_ah = derated_capacity(model, avg_current_a, mean_temp_c)?;
    Ok(cap_ah * 3600.0 * model.nominal_v / total / 365.25)
}

/// Daily means per node and annual means per transect for the
/// soil-temperature series, plot-ready.
#[derive(Debug, Clone, PartialEq)]
pub struct TransectAggregates {
    /// (node, day) -> (mean value, sample count).
    pub daily_node_means: BTreeMap<(NodeId, u32), (f64, u32)>,
    /// Annual mean per transect over all plots.
    pub annual_transect_means: BTreeMap<Transect, f64>,
}

pub fn transect_aggregates(store: &TimeSeriesStore) -> Result<TransectAggregates, AnalyticsError> {
    let mut daily: BTreeMap<(NodeId, u32), (f64, u32)> = BTreeMap::new();
    let mut per_transect: BTreeMap<Transect, (f64, u64)> = BTreeMap::new();
    for m in store.iter().filter(|m| m.sensor_kind == SensorKind::SoilTemp) {
        let day = m.sampled_at / 86400;
        let e = daily.entry((m.node, day)).or_insert((0.0, 0));
        e.0 += m.value();
        e.1 += 1;
        let t = per_transect.entry(m.transect).or_insert((0.0, 0));
        t.0 += m.value();
        t.1 += 1;
    }
    if daily.is_empty() {
        return Err(AnalyticsError::EmptyWindow);
    }
    Ok(TransectAggregates {
        daily_node_means: daily
            .into_iter()
            .map(|(k, (sum, n))| (k, (sum / n as f64, n)))
            .collect(),
        annual_transect_means: per_transect
            .into_iter()
            .map(|(k, (sum, n))| (k, sum / n as f64))
            .collect(),
    })
}
