//! Run artifacts on disk, and report regeneration from them.
//!
//! A finished run persists everything the reports need, so multi-year
//! simulations never have to be repeated just to reprint a table. The
//! event trace file is versioned with an explicit magic header.

use crate::alp::NodeId;
use crate::analytics::{
    daily_energy, ideal_lifetime_years, lifetime_projection, transect_aggregates, BatteryModel,
    EnergyBreakdown, PrrReport,
};
use crate::backend::{
    export, ExportFormat, ExportSelector, Measurement, TimeSeriesStore, CSV_HEADER,
};
use crate::environment::{Site, Transect};
use crate::node::EnergyBudget;
use crate::sim::kernel::RunOutput;
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Magic string opening every trace file.
pub const TRACE_MAGIC: &str = "BRLS-TRACE";

/// Current trace format version.
pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
    #[error("missing artifact {0}")]
    Missing(PathBuf),
    #[error("malformed artifact {path}: {message}")]
    Malformed { path: PathBuf, message: String },
}

/// Header document stored in `summary.json`; carries the inputs the
/// reports need to be regenerated without a re-run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub trace_version: u32,
    pub seed: u64,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub node_count: usize,
    pub gateway_count: usize,
    pub measurement_count: usize,
    pub energy_budget: EnergyBudget,
    pub battery_model: BatteryModel,
    pub daily_energy: EnergyBreakdown,
    pub ideal_lifetime_years: f64,
    pub derated_lifetime_years: f64,
    pub mean_prr_percent: f64,
}

fn mean_prr(prr: &PrrReport) -> f64 {
    if prr.rows.is_empty() {
        return 0.0;
    }
    prr.rows.iter().map(|r| r.prr_percent).sum::<f64>() / prr.rows.len() as f64
}

pub fn build_summary(output: &RunOutput) -> RunSummary {
    let budget = output.scenario.energy_budget;
    let model = BatteryModel::default();
    RunSummary {
        trace_version: TRACE_VERSION,
        seed: output.scenario.seed,
        start: output.scenario.start,
        end: output.scenario.end,
        node_count: output.scenario.nodes.len(),
        gateway_count: output.scenario.gateways.len(),
        measurement_count: output.backend.store.len(),
        energy_budget: budget,
        battery_model: model,
        daily_energy: daily_energy(&budget),
        ideal_lifetime_years: ideal_lifetime_years(&budget, model.rated_ah, model.nominal_v),
        derated_lifetime_years: lifetime_projection(&budget, &model, model.ref_temp_c)
            .unwrap_or(f64::NAN),
        mean_prr_percent: mean_prr(&output.prr),
    }
}

fn measurements_name(format: ExportFormat) -> &'static str {
    match format {
        ExportFormat::Csv => "measurements.csv",
        ExportFormat::LineProtocol => "measurements.lp",
    }
}

/// PRR rows as CSV, one row per (node, day).
pub fn prr_csv(prr: &PrrReport) -> String {
    let mut out = String::from("node,day,date,received,expected,prr_percent\n");
    for r in &prr.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{:.4}\n",
            r.node,
            r.day,
            prr.date_of(r.day),
            r.received,
            r.expected,
            r.prr_percent
        ));
    }
    out
}

/// Battery telemetry as CSV, one row per (node, day).
pub fn battery_csv(output: &RunOutput) -> String {
    let mut out = String::from("node,day,voltage_mv,capacity_j,alive\n");
    for s in &output.battery {
        out.push_str(&format!(
            "{},{},{},{:.3},{}\n",
            s.node, s.day, s.voltage_mv, s.capacity_j, s.alive
        ));
    }
    out
}

/// Writes the four run artifacts (plus the event trace when recorded)
/// and returns their paths. Output is byte-stable for identical runs.
pub fn write_artifacts(
    output: &RunOutput,
    out_dir: &Path,
    format: ExportFormat,
) -> Result<Vec<PathBuf>, ArtifactError> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    let measurements = export(&output.backend.store, &ExportSelector::default(), format);
    let m_path = out_dir.join(measurements_name(format));
    std::fs::write(&m_path, measurements)?;
    written.push(m_path);

    let p_path = out_dir.join("prr_daily.csv");
    std::fs::write(&p_path, prr_csv(&output.prr))?;
    written.push(p_path);

    let b_path = out_dir.join("battery_voltage.csv");
    std::fs::write(&b_path, battery_csv(output))?;
    written.push(b_path);

    let s_path = out_dir.join("summary.json");
    let mut doc = serde_json::to_string_pretty(&build_summary(output))?;
    doc.push('\n');
    std::fs::write(&s_path, doc)?;
    written.push(s_path);

    if output.scenario.record_events {
        let t_path = out_dir.join("trace.jsonl");
        let mut file = std::io::BufWriter::new(std::fs::File::create(&t_path)?);
        writeln!(file, "{} v{}", TRACE_MAGIC, TRACE_VERSION)?;
        for rec in &output.trace {
            writeln!(file, "{}", serde_json::to_string(rec)?)?;
        }
        written.push(t_path);
    }
    Ok(written)
}

fn read_artifact(path: &Path) -> Result<String, ArtifactError> {
    if !path.exists() {
        return Err(ArtifactError::Missing(path.to_path_buf()));
    }
    Ok(std::fs::read_to_string(path)?)
}

pub fn read_summary(out_dir: &Path) -> Result<RunSummary, ArtifactError> {
    let path = out_dir.join("summary.json");
    let content = read_artifact(&path)?;
    serde_json::from_str(&content).map_err(|e| ArtifactError::Malformed {
        path,
        message: e.to_string(),
    })
}

fn malformed(path: &Path, message: impl Into<String>) -> ArtifactError {
    ArtifactError::Malformed {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn parse_site(s: &str) -> Option<Site> {
    match s {
        "GN13" => Some(Site::Gn13),
        "GN45" => Some(Site::Gn45),
        "GO" => Some(Site::Go),
        _ => None,
    }
}

fn parse_transect(s: &str) -> Option<Transect> {
    Transect::ALL
        .into_iter()
        .find(|t| s.len() == 1 && s.starts_with(t.label()))
}

fn parse_kind(s: &str) -> Option<crate::alp::SensorKind> {
    use crate::alp::SensorKind::*;
    match s {
        "soil_temp" => Some(SoilTemp),
        "water_content" => Some(WaterContent),
        "weather" => Some(Weather),
        "ambient_trh" => Some(AmbientTRH),
        _ => None,
    }
}

/// Parses a measurements CSV export back into a store, for reports that
/// run against persisted artifacts.
pub fn parse_export_csv(content: &str, path: &Path) -> Result<TimeSeriesStore, ArtifactError> {
    let mut lines = content.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        _ => return Err(malformed(path, "bad or missing CSV header")),
    }
    let mut store = TimeSeriesStore::default();
    for (i, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 10 {
            return Err(malformed(path, format!("row {}: expected 10 columns", i + 2)));
        }
        let bad = |what: &str| malformed(path, format!("row {}: bad {what}", i + 2));
        let value: f64 = cols[6].parse().map_err(|_| bad("value"))?;
        store.append(Measurement {
            node: NodeId(cols[0].parse().map_err(|_| bad("node"))?),
            site: parse_site(cols[1]).ok_or_else(|| bad("site"))?,
            plot: cols[2].parse().map_err(|_| bad("plot"))?,
            transect: parse_transect(cols[3]).ok_or_else(|| bad("transect"))?,
            sensor_kind: parse_kind(cols[4]).ok_or_else(|| bad("sensor_kind"))?,
            sampled_at: cols[5].parse().map_err(|_| bad("sampled_at"))?,
            received_at_ms: 0,
            value_scaled: (value * 100.0).round() as i32,
            battery_mv: cols[7].parse().map_err(|_| bad("battery_mv"))?,
            rssi_dbm: cols[8].parse().map_err(|_| bad("rssi_dbm"))?,
            gateway_id: NodeId(cols[9].parse().map_err(|_| bad("gateway_id"))?),
        });
    }
    Ok(store)
}

/// Regenerates the PRR matrix (nodes x days) from `prr_daily.csv`.
pub fn report_prr(out_dir: &Path) -> Result<String, ArtifactError> {
    let path = out_dir.join("prr_daily.csv");
    let content = read_artifact(&path)?;
    let summary = read_summary(out_dir)?;
    let mut counts = Vec::new();
    for (i, line) in content.lines().skip(1).enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 6 {
            return Err(malformed(&path, format!("row {}: expected 6 columns", i + 2)));
        }
        let bad = |what: &str| malformed(&path, format!("row {}: bad {what}", i + 2));
        counts.push((
            NodeId(cols[0].parse().map_err(|_| bad("node"))?),
            cols[1].parse().map_err(|_| bad("day"))?,
            cols[3].parse().map_err(|_| bad("received"))?,
            cols[4].parse().map_err(|_| bad("expected"))?,
        ));
    }
    let report = PrrReport::from_counts(summary.start, counts)
        .map_err(|e| malformed(&path, e.to_string()))?;
    Ok(report.daily_matrix_csv())
}

/// Energy breakdown table from the persisted budget.
pub fn report_energy(out_dir: &Path) -> Result<String, ArtifactError> {
    let summary = read_summary(out_dir)?;
    let e = daily_energy(&summary.energy_budget);
    Ok(format!(
        "component,joules_per_day\nsleep,{:.2}\nsniff,{:.2}\nsample,{:.2}\ntotal,{:.2}\n",
        e.sleep_j, e.sniff_j, e.sample_j, e.total_j
    ))
}

/// Lifetime projections from the persisted budget and battery model.
pub fn report_lifetime(out_dir: &Path) -> Result<String, ArtifactError> {
    let summary = read_summary(out_dir)?;
    let budget = summary.energy_budget;
    let model = summary.battery_model;
    let ideal = ideal_lifetime_years(&budget, model.rated_ah, model.nominal_v);
    let warm = lifetime_projection(&budget, &model, model.ref_temp_c)
        .map_err(|e| malformed(&out_dir.join("summary.json"), e.to_string()))?;
    let cold = lifetime_projection(&budget, &model, 5.0)
        .map_err(|e| malformed(&out_dir.join("summary.json"), e.to_string()))?;
    Ok(format!(
        "metric,years\nideal,{:.2}\nderated_20c,{:.2}\nderated_5c,{:.2}\n",
        ideal, warm, cold
    ))
}

/// Annual per-transect soil-temperature means from the measurement
/// export.
pub fn report_transects(out_dir: &Path) -> Result<String, ArtifactError> {
    let path = out_dir.join("measurements.csv");
    let content = read_artifact(&path)?;
    let store = parse_export_csv(&content, &path)?;
    let agg = transect_aggregates(&store).map_err(|e| malformed(&path, e.to_string()))?;
    let mut out = String::from("transect,annual_mean_c\n");
    for (t, mean) in &agg.annual_transect_means {
        out.push_str(&format!("{},{:.3}\n", t.label(), mean));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alp::SensorKind;

    fn sample_store() -> TimeSeriesStore {
        let mut store = TimeSeriesStore::default();
        for (i, t) in [Transect::A, Transect::D].iter().enumerate() {
            store.append(Measurement {
                node: NodeId(100 + i as u64),
                site: Site::Gn13,
                plot: 1,
                transect: *t,
                sensor_kind: SensorKind::SoilTemp,
                sampled_at: 900 * i as u32,
                received_at_ms: 900_020 * i as u64,
                value_scaled: 737 + i as i32,
                battery_mv: 3650,
                rssi_dbm: -91.25,
                gateway_id: NodeId(901),
            });
        }
        store
    }

    #[test]
    fn csv_export_roundtrips_through_parser() {
        let store = sample_store();
        let text = export(&store, &ExportSelector::default(), ExportFormat::Csv);
        let back = parse_export_csv(&text, Path::new("mem")).unwrap();
        assert_eq!(back.len(), store.len());
        let orig: Vec<_> = store.iter().collect();
        let parsed: Vec<_> = back.iter().collect();
        for (a, b) in orig.iter().zip(&parsed) {
            assert_eq!(a.node, b.node);
            assert_eq!(a.transect, b.transect);
            assert_eq!(a.value_scaled, b.value_scaled);
            assert_eq!(a.sampled_at, b.sampled_at);
        }
    }

    #[test]
    fn parser_rejects_missing_header_and_bad_rows() {
        let p = Path::new("mem");
        assert!(parse_export_csv("", p).is_err());
        let bad = format!("{CSV_HEADER}\n1,GN13,1,A,soil_temp,0,seven,3650,-91.0,901\n");
        assert!(parse_export_csv(&bad, p).is_err());
        let short = format!("{CSV_HEADER}\n1,GN13,1\n");
        assert!(parse_export_csv(&short, p).is_err());
    }

    #[test]
    fn missing_artifacts_are_reported_as_missing() {
        let dir = tempfile::tempdir().unwrap();
        match report_prr(dir.path()) {
            Err(ArtifactError::Missing(p)) => assert!(p.ends_with("prr_daily.csv")),
            other => panic!("unexpected: {other:?}"),
        }
    }
}
