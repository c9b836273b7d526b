//! Command-line pipeline: ingest scenarios, partition them into states,
//! clear state-contingent bids and print reports.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use state_auction::clearing::{self, price_sweep, verify_equilibrium, ClearingError, ClearingResult};
use state_auction::market::{assemble_welfare, BidFile, MarketError};
use state_auction::quantizer::{
    describe_states, export_miqp, render_partition_svg, solve_dp_1d, solve_exact, solve_lloyd, BigM,
    QuantizationSolution, QuantizerError, StateReport,
};
use state_auction::scenario::fetch::{
    fetch_ensemble, EnsembleQuery, FetchMode, HttpTransport, Location, ResponseCache, DEFAULT_ENDPOINT,
};
use state_auction::scenario::{read_scenarios_csv, write_scenarios_csv, ScenarioError, ScenarioSet};

pub const ENDPOINT_ENV: &str = "STATE_AUCTION_ENDPOINT";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Quantizer(#[from] QuantizerError),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Clearing(#[from] ClearingError),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    /// 0 success, 1 validation error, 2 solver failure, 3 verification failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::Scenario(_) | CliError::Market(_) | CliError::Io { .. } => 1,
            CliError::Quantizer(e) => match e {
                QuantizerError::EmptyState(_) | QuantizerError::CoincidentCenters(..) => 2,
                _ => 1,
            },
            CliError::Clearing(e) => match e {
                ClearingError::TooManyBinaries { .. } | ClearingError::Market(_) => 1,
                ClearingError::Infeasible | ClearingError::Unbounded | ClearingError::Lp(_) => 2,
            },
            CliError::Verification(_) => 3,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "state-auction", version, about = "State partitioning and state-contingent market clearing")]
pub struct RunConfig {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fetch or import a scenario set and write it as CSV.
    Ingest(IngestArgs),
    /// Partition a scenario set into states.
    Partition(PartitionArgs),
    /// Clear a bid file.
    Clear(ClearArgs),
    /// Print a saved partition or clearing result.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Import this CSV instead of fetching.
    #[arg(long)]
    pub scenarios: Option<PathBuf>,
    /// `LAT,LON`; repeat for several locations.
    #[arg(long = "location", value_parser = parse_location)]
    pub locations: Vec<Location>,
    /// Forecast target hour (RFC 3339).
    #[arg(long)]
    pub target_time: Option<DateTime<Utc>>,
    #[arg(long, env = ENDPOINT_ENV, default_value = DEFAULT_ENDPOINT)]
    pub endpoint: String,
    /// Response cache directory; defaults to `<out>/cache`.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Replay from the cache only.
    #[arg(long, conflicts_with = "refresh")]
    pub offline: bool,
    /// Ignore cached responses.
    #[arg(long)]
    pub refresh: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverChoice {
    Exact,
    Lloyd,
    Dp1d,
}

#[derive(Debug, Args)]
pub struct PartitionArgs {
    #[arg(long)]
    pub scenarios: PathBuf,
    /// Number of states; a comma-separated list runs each in turn.
    #[arg(long, value_delimiter = ',', required = true)]
    pub states: Vec<usize>,
    #[arg(long, value_enum, default_value_t = SolverChoice::Lloyd)]
    pub solver: SolverChoice,
    #[arg(long, default_value_t = 64)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write an SVG of the partition (two-dimensional sets only).
    #[arg(long)]
    pub svg: bool,
    /// Also write the big-M model file.
    #[arg(long)]
    pub miqp: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClearArgs {
    #[arg(long)]
    pub bids: PathBuf,
    /// Sweep common beliefs (π1, 1 - π1) over this many equal steps.
    #[arg(long, num_args = 0..=1, default_missing_value = "10")]
    pub sweep_pi: Option<usize>,
    /// Equilibrium gap tolerance.
    #[arg(long, default_value_t = clearing::DEFAULT_TOLERANCE)]
    pub tolerance: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Partition JSON written by `partition`.
    #[arg(long, conflicts_with = "result", required_unless_present = "result")]
    pub partition: Option<PathBuf>,
    /// Result JSON written by `clear`.
    #[arg(long)]
    pub result: Option<PathBuf>,
}

fn parse_location(text: &str) -> std::result::Result<Location, String> {
    let (lat, lon) = text.split_once(',').ok_or("expected LAT,LON")?;
    let lat: f64 = lat.trim().parse().map_err(|e| format!("latitude: {e}"))?;
    let lon: f64 = lon.trim().parse().map_err(|e| format!("longitude: {e}"))?;
    if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
        return Err(format!("({lat}, {lon}) is not a valid coordinate"));
    }
    Ok(Location::new(lat, lon))
}

pub fn run(config: RunConfig) -> Result<String> {
    match config.command {
        Command::Ingest(args) => cmd_ingest(&args),
        Command::Partition(args) => cmd_partition(&args),
        Command::Clear(args) => cmd_clear(&args),
        Command::Report(args) => cmd_report(&args),
    }
}

fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(CliError::Validation(format!("{} does not exist", path.display())));
    }
    Ok(())
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Wraps a payload with the run metadata; the timestamp lives only here.
fn document(payload: Value) -> Value {
    let mut doc = json!({
        "metadata": {
            "generated_at": Utc::now().to_rfc3339(),
            "tool": "state-auction",
            "version": env!("CARGO_PKG_VERSION"),
        }
    });
    if let (Value::Object(target), Value::Object(fields)) = (&mut doc, payload) {
        target.extend(fields);
    }
    doc
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    write(path, &(serde_json::to_string_pretty(value).expect("json serializes") + "\n"))
}

fn summary(set: &ScenarioSet) -> String {
    let mean: Vec<String> = set.mean().iter().map(|v| format!("{v:.4}")).collect();
    format!(
        "L = {}, k = {}, mean = ({}), variance = {:.6}\n",
        set.len(),
        set.dim(),
        mean.join(", "),
        set.variance()
    )
}

pub fn cmd_ingest(args: &IngestArgs) -> Result<String> {
    let set = match &args.scenarios {
        Some(path) => {
            require_file(path)?;
            read_scenarios_csv(path)?
        }
        None => {
            if args.locations.is_empty() {
                return Err(CliError::Validation("give --scenarios or at least one --location".into()));
            }
            let target = args
                .target_time
                .ok_or_else(|| CliError::Validation("--target-time is required when fetching".into()))?;
            let cache = ResponseCache::new(args.cache.clone().unwrap_or_else(|| args.out.join("cache")));
            let mode = if args.offline {
                FetchMode::Offline
            } else if args.refresh {
                FetchMode::Refresh
            } else {
                FetchMode::CacheFirst
            };
            let query = EnsembleQuery::new(args.endpoint.clone(), args.locations.clone(), target);
            let transport = HttpTransport::new()?;
            fetch_ensemble(&query, &transport, &cache, mode)?
        }
    };
    create_dir(&args.out)?;
    let csv_path = args.out.join("scenarios.csv");
    write_scenarios_csv(&set, &csv_path)?;
    if let Some(source) = set.source() {
        write_json(&args.out.join("scenarios.source.json"), &document(json!({ "source": source })))?;
    }
    Ok(format!("wrote {}\n{}", csv_path.display(), summary(&set)))
}

#[derive(Serialize)]
struct PartitionConfig {
    solver: SolverChoice,
    states: usize,
    restarts: usize,
    seed: u64,
}

fn solve(set: &ScenarioSet, states: usize, args: &PartitionArgs) -> Result<QuantizationSolution> {
    Ok(match args.solver {
        SolverChoice::Exact => solve_exact(set, states)?,
        SolverChoice::Lloyd => solve_lloyd(set, states, args.restarts, args.seed)?,
        SolverChoice::Dp1d => solve_dp_1d(set, states)?,
    })
}

pub fn cmd_partition(args: &PartitionArgs) -> Result<String> {
    require_file(&args.scenarios)?;
    if args.states.iter().any(|&s| s == 0) {
        return Err(CliError::Validation("--states must be at least 1".into()));
    }
    if args.solver == SolverChoice::Lloyd && args.restarts == 0 {
        return Err(CliError::Validation("--restarts must be at least 1".into()));
    }
    let set = read_scenarios_csv(&args.scenarios)?;
    if args.svg && set.dim() != 2 {
        return Err(CliError::Validation(format!("--svg needs two-dimensional scenarios, got k = {}", set.dim())));
    }
    create_dir(&args.out)?;
    let mut out = summary(&set);
    for &states in &args.states {
        let solution = solve(&set, states, args)?;
        let report = describe_states(&solution);
        let stem = format!("partition_S{states}");
        let doc = document(json!({
            "config": PartitionConfig { solver: args.solver, states, restarts: args.restarts, seed: args.seed },
            "scenarios": { "count": set.len(), "dimension": set.dim(), "digest": set.digest() },
            "solution": solution,
            "states": report,
        }));
        write_json(&args.out.join(format!("{stem}.json")), &doc)?;
        write(&args.out.join(format!("{stem}.txt")), &report.to_string())?;
        if args.svg {
            write(&args.out.join(format!("{stem}.svg")), &render_partition_svg(&solution, &set)?)?;
        }
        if args.miqp {
            write(&args.out.join(format!("{stem}.miqp")), &export_miqp(&set, states, BigM::Auto)?)?;
        }
        out += &format!(
            "S = {states}: objective = {:.9}, provenance = {}, converged = {}\n{report}",
            solution.objective,
            serde_json::to_value(solution.provenance).expect("provenance serializes").as_str().unwrap_or("?"),
            solution.converged
        );
    }
    Ok(out)
}

fn format_values(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| format!("{}", (v * 1e9).round() / 1e9 + 0.0)).collect();
    format!("({})", parts.join(", "))
}

fn describe_result(result: &ClearingResult) -> String {
    let mut out = format!(
        "welfare = {:.6}, prices = {}\n",
        result.welfare,
        format_values(&result.prices.values)
    );
    for agent in &result.agents {
        out += &format!(
            "  {}: x = {}{}, pays {:.6}, surplus {:.6}\n",
            agent.id,
            format_values(&agent.allocation.values),
            if agent.decisions.is_empty() {
                String::new()
            } else {
                format!(", z = {}", format_values(&agent.decisions))
            },
            agent.payment,
            agent.surplus
        );
    }
    let v = &result.verification;
    out += &format!(
        "  equilibrium: {} (max gap {:.3e}, balance {:.3e}, budget {:.3e})\n",
        if v.equilibrium { "confirmed" } else { "NOT confirmed" },
        v.max_gap,
        v.balance_residual,
        v.budget_residual
    );
    if !v.negative_surplus.is_empty() {
        out += &format!("  negative surplus: {}\n", v.negative_surplus.join(", "));
    }
    out
}

pub fn cmd_clear(args: &ClearArgs) -> Result<String> {
    require_file(&args.bids)?;
    if !(args.tolerance > 0.0) {
        return Err(CliError::Validation("--tolerance must be positive".into()));
    }
    let file = BidFile::parse(&read(&args.bids)?)?;
    let program = assemble_welfare(file.agents, file.dimensions)?;
    create_dir(&args.out)?;
    let mut out = String::new();
    let mut failures = Vec::new();
    match args.sweep_pi {
        None => {
            let mut result = clearing::clear(&program)?;
            result.verification = verify_equilibrium(&result, &program, args.tolerance);
            if !result.verification.equilibrium {
                failures.push("clearing result".to_string());
            }
            write_json(&args.out.join("clearing_result.json"), &document(json!({ "result": result })))?;
            out += &describe_result(&result);
        }
        Some(steps) => {
            let mut table = price_sweep(&program, steps)?;
            for row in &mut table.rows {
                let p = program.with_common_beliefs(&[row.pi1, row.pi2])?;
                row.result.verification = verify_equilibrium(&row.result, &p, args.tolerance);
                if !row.result.verification.equilibrium {
                    failures.push(format!("pi1 = {}", row.pi1));
                }
            }
            let csv = table.to_csv();
            write(&args.out.join("price_table.csv"), &csv)?;
            write_json(&args.out.join("sweep.json"), &document(json!({ "sweep": table })))?;
            out += &csv;
        }
    }
    if !failures.is_empty() {
        return Err(CliError::Verification(format!(
            "no equilibrium within {} for {}\n{out}",
            args.tolerance,
            failures.join(", ")
        )));
    }
    Ok(out)
}

pub fn cmd_report(args: &ReportArgs) -> Result<String> {
    let (path, key) = match (&args.partition, &args.result) {
        (Some(p), _) => (p, "states"),
        (None, Some(r)) => (r, "result"),
        (None, None) => return Err(CliError::Validation("give --partition or --result".into())),
    };
    require_file(path)?;
    let doc: Value = serde_json::from_str(&read(path)?).map_err(|e| CliError::Validation(e.to_string()))?;
    let section = doc
        .get(key)
        .cloned()
        .ok_or_else(|| CliError::Validation(format!("{} has no `{key}` section", path.display())))?;
    let bad = |e: serde_json::Error| CliError::Validation(format!("{}: {e}", path.display()));
    if key == "states" {
        let states: Vec<state_auction::quantizer::StateDescription> =
            serde_json::from_value(section["states"].clone()).map_err(bad)?;
        Ok(StateReport { states }.to_string())
    } else {
        let result: ClearingResult = serde_json::from_value(section).map_err(bad)?;
        Ok(describe_result(&result))
    }
}
