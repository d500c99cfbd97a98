//! `borealis` command-line front end: validate scenarios, run them,
//! query live nodes, and regenerate reports from persisted artifacts.
//!
//! Exit codes: 0 success, 1 validation error (bad scenario or flags),
//! 2 runtime error (kernel failure, missing artifacts, unknown node).

use borealis::alp::{FileId, NodeConfig, NodeId, SensorDataRecord, FILE_CONFIG, FILE_SENSOR_DATA};
use borealis::backend::{ExportFormat, RequestState};
use borealis::sim::kernel::Kernel;
use borealis::sim::scenario::load_scenario;
use borealis::sim::trace;
use chrono::NaiveDate;
use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "borealis", version, about = "Sensor-network simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportArg {
    Csv,
    Lp,
}

impl From<ExportArg> for ExportFormat {
    fn from(a: ExportArg) -> Self {
        match a {
            ExportArg::Csv => ExportFormat::Csv,
            ExportArg::Lp => ExportFormat::LineProtocol,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportKind {
    Prr,
    Energy,
    Lifetime,
    Transects,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a scenario; print its materialized shape.
    Validate { scenario: PathBuf },
    /// Run a scenario and write artifacts to the output directory.
    Run {
        scenario: PathBuf,
        /// Output directory (default: scenario stem, or $BOREALIS_OUT).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Stop at this date instead of the scenario end (exclusive).
        #[arg(long)]
        until: Option<NaiveDate>,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Measurement export format.
        #[arg(long, value_enum, default_value = "csv")]
        export: ExportArg,
    },
    /// Run a scenario briefly, query one node file, print the answer.
    Query {
        scenario: PathBuf,
        /// Target node id.
        #[arg(long)]
        node: u64,
        /// File id (decimal or 0x-hex), e.g. 0x40 or 0x41.
        #[arg(long)]
        file: String,
        /// Simulated warm-up before the query, seconds.
        #[arg(long, default_value_t = 3600)]
        warmup_s: u64,
    },
    /// Regenerate a report from a run's artifact directory.
    Report {
        out_dir: PathBuf,
        #[arg(long, value_enum)]
        which: ReportKind,
    },
}

fn fail(code: u8, message: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(code)
}

fn read_scenario_file(path: &PathBuf) -> Result<borealis::sim::Scenario, String> {
    let content =
        std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    load_scenario(&content).map_err(|e| format!("{}: {e}", path.display()))
}

fn cmd_validate(path: PathBuf) -> ExitCode {
    let mut scenario = match read_scenario_file(&path) {
        Ok(s) => s,
        Err(e) => return fail(1, e),
    };
    if let Err(e) = scenario.materialize() {
        return fail(1, format!("{}: {e}", path.display()));
    }
    println!("scenario OK");
    println!("seed: {}", scenario.seed);
    println!("start: {}", scenario.start);
    println!("end: {}", scenario.end);
    println!("days: {}", scenario.duration_days());
    println!("nodes: {}", scenario.nodes.len());
    println!("gateways: {}", scenario.gateways.len());
    println!("faults: {}", scenario.faults.len());
    ExitCode::SUCCESS
}

fn default_out_dir(scenario_path: &PathBuf) -> PathBuf {
    if let Ok(dir) = std::env::var("BOREALIS_OUT") {
        return PathBuf::from(dir);
    }
    scenario_path
        .file_stem()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn cmd_run(
    path: PathBuf,
    out: Option<PathBuf>,
    until: Option<NaiveDate>,
    seed: Option<u64>,
    export: ExportArg,
) -> ExitCode {
    let mut scenario = match read_scenario_file(&path) {
        Ok(s) => s,
        Err(e) => return fail(1, e),
    };
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    if let Some(until) = until {
        if until <= scenario.start {
            return fail(1, format!("--until {until} is not after start {}", scenario.start));
        }
        scenario.end = scenario.end.min(until);
    }
    let out_dir = out.unwrap_or_else(|| default_out_dir(&path));
    let kernel = match Kernel::new(scenario) {
        Ok(k) => k,
        Err(e) => return fail(1, format!("{}: {e}", path.display())),
    };
    let output = kernel.finish();
    match trace::write_artifacts(&output, &out_dir, export.into()) {
        Ok(files) => {
            println!("measurements: {}", output.backend.store.len());
            for f in files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(2, e),
    }
}

fn parse_file_id(s: &str) -> Result<FileId, String> {
    let raw = if let Some(hex) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        u8::from_str_radix(hex, 16)
    } else {
        s.parse()
    };
    raw.map(FileId).map_err(|_| format!("bad file id {s:?}"))
}

fn cmd_query(path: PathBuf, node: u64, file: String, warmup_s: u64) -> ExitCode {
    let file = match parse_file_id(&file) {
        Ok(f) => f,
        Err(e) => return fail(1, e),
    };
    let scenario = match read_scenario_file(&path) {
        Ok(s) => s,
        Err(e) => return fail(1, e),
    };
    let mut kernel = match Kernel::new(scenario) {
        Ok(k) => k,
        Err(e) => return fail(1, format!("{}: {e}", path.display())),
    };
    kernel.run_until(warmup_s * 1000);
    let id = match kernel.issue_query(NodeId(node), file) {
        Ok(id) => id,
        Err(e) => return fail(2, e),
    };
    // Past the request timeout, the outcome is settled either way.
    kernel.run_until(warmup_s * 1000 + 2 * borealis::backend::DOWNLINK_TIMEOUT_MS);
    let req = kernel.backend.request(id).expect("request exists");
    match (req.state, &req.answer) {
        (RequestState::Answered, Some(payload)) => {
            println!("Answered (node {node}, file {file})");
            if file == FILE_SENSOR_DATA {
                match SensorDataRecord::from_bytes(payload) {
                    Ok(r) => {
                        println!("timestamp_s: {}", r.timestamp);
                        println!("sensor_kind: {:?}", r.sensor_kind);
                        println!("value: {:.2}", r.value_scaled as f64 / 100.0);
                        println!("battery_mv: {}", r.battery_mv);
                    }
                    Err(e) => return fail(2, e),
                }
            } else if file == FILE_CONFIG {
                match NodeConfig::from_bytes(payload) {
                    Ok(c) => {
                        println!("sensor_kind: {:?}", c.sensor_kind);
                        println!("sampling_interval_s: {}", c.sampling_interval_s);
                        println!("resolution_bits: {}", c.resolution_bits);
                    }
                    Err(e) => return fail(2, e),
                }
            } else {
                println!("payload: {payload:02x?}");
            }
            ExitCode::SUCCESS
        }
        _ => {
            println!("Expired");
            ExitCode::SUCCESS
        }
    }
}

fn cmd_report(out_dir: PathBuf, which: ReportKind) -> ExitCode {
    let result = match which {
        ReportKind::Prr => trace::report_prr(&out_dir),
        ReportKind::Energy => trace::report_energy(&out_dir),
        ReportKind::Lifetime => trace::report_lifetime(&out_dir),
        ReportKind::Transects => trace::report_transects(&out_dir),
    };
    match result {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(2, e),
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Validate { scenario } => cmd_validate(scenario),
        Command::Run {
            scenario,
            out,
            until,
            seed,
            export,
        } => cmd_run(scenario, out, until, seed, export),
        Command::Query {
            scenario,
            node,
            file,
            warmup_s,
        } => cmd_query(scenario, node, file, warmup_s),
        Command::Report { out_dir, which } => cmd_report(out_dir, which),
    }
}
