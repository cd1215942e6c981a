//! Executes parsed experiment specs: expands cells × repetitions into rows,
//! dispatches the runs to a worker pool, and emits one CSV (fixed header,
//! deterministic bytes) plus one JSON summary per output file. Baseline and
//! analytics runs share the same emission conventions.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use polyvote::adversary::make_strategy;
use polyvote::analytics::{curve_value, CurveId, CurveParams};
use polyvote::baselines::{
    run_bitcoin, run_ghost_balancing, ChainConfig, ChainMode, ChainResult, GhostConfig,
    GhostOutcome,
};
use polyvote::engine::{run, EngineError, SimResult};
use rayon::prelude::*;
use serde_json::{json, Map, Value};

use crate::spec::{echo_document, Cell, ExperimentSpec};

/// The one CSV schema every simulation-shaped table uses.
pub const CSV_HEADER: &str = "run_id,seed,beta,beta_active,m,strategy,epsilon,\
mean_tx_latency_rounds,mean_tx_latency_seconds,p95_latency,list_confirm_mean_rounds,\
throughput_tx_per_round,nonredundant_fraction,safety_violations";

/// Anything that should stop the program, mapped to its exit code.
#[derive(Debug)]
pub enum CliError {
    /// Unreadable, malformed, or invalid configuration — exit 2.
    Config(String),
    /// A strategy broke the rules mid-run — exit 3.
    Fault(String),
    /// More confirmed-level safety violations than the epsilon budget
    /// allows — exit 4 (outputs are still written first).
    Budget { violations: u64, allowed: u64 },
    /// Filesystem trouble writing results — exit 1.
    Io(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Fault(_) => 3,
            CliError::Budget { .. } => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) | CliError::Fault(m) | CliError::Io(m) => f.write_str(m),
            CliError::Budget { violations, allowed } => write!(
                f,
                "safety-violation budget exceeded: {violations} violations > {allowed} allowed"
            ),
        }
    }
}

impl std::error::Error for CliError {}

impl From<crate::spec::ConfigFileError> for CliError {
    fn from(e: crate::spec::ConfigFileError) -> CliError {
        CliError::Config(e.0)
    }
}

fn engine_error(e: EngineError) -> CliError {
    match e {
        EngineError::Config(c) => CliError::Config(c.to_string()),
        fault @ EngineError::StrategyFault { .. } => CliError::Fault(fault.to_string()),
    }
}

/// One CSV row. Optional cells print as empty fields: a metric that does not
/// exist for a run (no confirmed transactions, protocol without the concept)
/// is distinguishable from a zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub run_id: u64,
    pub seed: u64,
    pub beta: f64,
    pub beta_active: f64,
    pub m: usize,
    pub strategy: String,
    pub epsilon: Option<f64>,
    pub mean_tx_latency_rounds: Option<f64>,
    pub mean_tx_latency_seconds: Option<f64>,
    pub p95_latency: Option<f64>,
    pub list_confirm_mean_rounds: Option<f64>,
    pub throughput_tx_per_round: Option<f64>,
    pub nonredundant_fraction: Option<f64>,
    pub safety_violations: u64,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Row {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.run_id,
            self.seed,
            self.beta,
            self.beta_active,
            self.m,
            self.strategy,
            cell(self.epsilon),
            cell(self.mean_tx_latency_rounds),
            cell(self.mean_tx_latency_seconds),
            cell(self.p95_latency),
            cell(self.list_confirm_mean_rounds),
            cell(self.throughput_tx_per_round),
            cell(self.nonredundant_fraction),
            self.safety_violations,
        )
    }
}

/// Renders a finished table as CSV bytes: fixed header, one line per row,
/// trailing newline a fixed part of the format.
pub fn to_csv(rows: &[Row]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv_line());
        out.push('\n');
    }
    out
}

/// Everything a finished experiment produces: the CSV table, the JSON
/// summary, and the safety-budget verdict the exit code reflects.
#[derive(Debug)]
pub struct Artifacts {
    pub rows: Vec<Row>,
    pub summary: Value,
    pub budget_violations: u64,
    pub budget_allowed: u64,
}

impl Artifacts {
    pub fn budget_exceeded(&self) -> bool {
        self.budget_violations > self.budget_allowed
    }
}

struct RowBundle {
    row: Row,
    echo: Map<String, Value>,
    detail: Value,
    /// epsilon × confirmed levels: this run's contribution to the budget.
    budget_scale: f64,
    violations: u64,
    delta_fallback: bool,
}

/// Runs every cell × repetition of a spec on the worker pool and assembles
/// the artifacts. Rows are merged in run_id order regardless of which worker
/// finished first.
pub fn run_spec(spec: &ExperimentSpec) -> Result<Artifacts, CliError> {
    let mut jobs: Vec<(u64, Cell)> = Vec::new();
    for (cell_idx, cell) in spec.cells.iter().enumerate() {
        for rep in 0..spec.repetitions {
            let run_id = cell_idx as u64 * spec.repetitions as u64 + rep as u64;
            let mut cell = cell.clone();
            cell.config.seed = cell.config.seed.wrapping_add(run_id);
            jobs.push((run_id, cell));
        }
    }

    let mut bundles: Vec<RowBundle> = jobs
        .into_par_iter()
        .map(|(run_id, cell)| {
            let mut strategy = make_strategy(&cell.strategy)
                .map_err(|e| CliError::Config(e.to_string()))?;
            let result = run(&cell.config, strategy.as_mut()).map_err(engine_error)?;
            Ok(bundle_from_result(run_id, &cell.strategy, &result))
        })
        .collect::<Result<_, CliError>>()?;
    bundles.sort_by_key(|b| b.row.run_id);

    let violations: u64 = bundles.iter().map(|b| b.violations).sum();
    let allowed = bundles.iter().map(|b| b.budget_scale).sum::<f64>().ceil() as u64;
    let delta_fallback = bundles.iter().any(|b| b.delta_fallback);

    let summary = json!({
        "mode": spec.mode.to_string(),
        "repetitions": spec.repetitions,
        "cells": spec.cells.len(),
        "sweep": sweep_echo(&spec.sweep),
        "delta_fallback": delta_fallback,
        "safety_budget": {
            "violations": violations,
            "allowed": allowed,
            "exceeded": violations > allowed,
        },
        "rows": bundles.iter().map(|b| json!({
            "run_id": b.row.run_id,
            "seed": b.row.seed,
            "strategy": b.row.strategy,
            "echo": b.echo,
            "metrics": row_metrics(&b.row),
            "detail": b.detail,
        })).collect::<Vec<_>>(),
    });

    Ok(Artifacts {
        rows: bundles.into_iter().map(|b| b.row).collect(),
        summary,
        budget_violations: violations,
        budget_allowed: allowed,
    })
}

fn sweep_echo(sweep: &BTreeMap<String, Vec<Value>>) -> Value {
    Value::Object(
        sweep
            .iter()
            .map(|(k, vs)| (k.clone(), Value::Array(vs.clone())))
            .collect(),
    )
}

fn row_metrics(row: &Row) -> Value {
    json!({
        "beta": row.beta,
        "beta_active": row.beta_active,
        "m": row.m,
        "epsilon": row.epsilon,
        "mean_tx_latency_rounds": row.mean_tx_latency_rounds,
        "mean_tx_latency_seconds": row.mean_tx_latency_seconds,
        "p95_latency": row.p95_latency,
        "list_confirm_mean_rounds": row.list_confirm_mean_rounds,
        "throughput_tx_per_round": row.throughput_tx_per_round,
        "nonredundant_fraction": row.nonredundant_fraction,
        "safety_violations": row.safety_violations,
    })
}

fn bundle_from_result(run_id: u64, strategy: &str, result: &SimResult) -> RowBundle {
    let config = &result.config;
    // Latency of honest (non-conflicting) transactions, arrival to list
    // confirmation, in rounds.
    let mut lats: Vec<f64> = result
        .txs
        .iter()
        .filter(|t| t.conflicts_with.is_none())
        .filter_map(|t| t.confirmed_round.map(|c| (c - t.arrival_round) as f64))
        .collect();
    lats.sort_by(|a, b| a.partial_cmp(b).expect("latencies are finite"));
    let (mean_rounds, p95) = if lats.is_empty() {
        (None, None)
    } else {
        let mean = lats.iter().sum::<f64>() / lats.len() as f64;
        let rank = (0.95 * lats.len() as f64).ceil() as usize;
        (Some(mean), Some(lats[rank.clamp(1, lats.len()) - 1]))
    };
    let list_mean = if result.fast_levels.is_empty() {
        None
    } else {
        Some(result.list_confirm_mean_rounds())
    };
    let violations = result.safety.total_violations();
    let confirmed_levels = (result.fast_levels.len() + result.slow_levels.len()) as f64;
    let row = Row {
        run_id,
        seed: config.seed,
        beta: config.beta,
        beta_active: config.beta_active(),
        m: config.m,
        strategy: strategy.to_string(),
        epsilon: Some(config.epsilon),
        mean_tx_latency_rounds: mean_rounds,
        mean_tx_latency_seconds: mean_rounds.map(|r| r * config.delta()),
        p95_latency: p95,
        list_confirm_mean_rounds: list_mean,
        throughput_tx_per_round: Some(result.confirmed_tx_count() as f64 / result.rounds as f64),
        nonredundant_fraction: Some(result.throughput.non_redundant_fraction()),
        safety_violations: violations,
    };
    let detail = json!({
        "rounds": result.rounds,
        "max_level": result.max_level,
        "fast_levels": result.fast_levels.len(),
        "slow_levels": result.slow_levels.len(),
        "confirmed_txs": result.confirmed_tx_count(),
        "blocks": {
            "proposer": result.blocks.proposer,
            "voter": result.blocks.voter,
            "transaction": result.blocks.transaction,
            "withheld": result.blocks.withheld,
        },
        "safety": {
            "list_instances": result.safety.list_instances,
            "list_violations": result.safety.list_violations,
            "slow_instances": result.safety.slow_instances,
            "slow_violations": result.safety.slow_violations,
            "bound_instances": result.safety.bound_instances,
            "bound_violations": result.safety.bound_violations,
            "consistency_instances": result.safety.consistency_instances,
            "consistency_violations": result.safety.consistency_violations,
        },
    });
    RowBundle {
        echo: echo_document(strategy, config),
        detail,
        budget_scale: config.epsilon * confirmed_levels,
        violations,
        delta_fallback: !config.has_physicals(),
        row,
    }
}

/// Writes the CSV (stdout when no path is given) and, when writing to a
/// file, the JSON summary next to it: `results.csv` → `results.csv.json`.
/// The suffix is appended, never substituted, so the summary can neither
/// clobber the table nor any sibling file sharing its stem.
pub fn emit(artifacts: &Artifacts, out: Option<&Path>) -> Result<(), CliError> {
    let csv = to_csv(&artifacts.rows);
    match out {
        None => {
            print!("{csv}");
            Ok(())
        }
        Some(path) => {
            std::fs::write(path, csv)
                .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
            let spath = summary_path(path);
            let text = serde_json::to_string_pretty(&artifacts.summary)
                .expect("summary serializes")
                + "\n";
            std::fs::write(&spath, text)
                .map_err(|e| CliError::Io(format!("cannot write {}: {e}", spath.display())))?;
            Ok(())
        }
    }
}

/// `results.csv` → `results.csv.json`.
pub fn summary_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

/// Post-emission verdict shared by all run modes.
pub fn check_budget(artifacts: &Artifacts) -> Result<(), CliError> {
    if artifacts.budget_exceeded() {
        Err(CliError::Budget {
            violations: artifacts.budget_violations,
            allowed: artifacts.budget_allowed,
        })
    } else {
        Ok(())
    }
}

/// Warns (once per invocation) when rounds have no physical duration, so the
/// seconds column is rounds at Δ = 1.
pub fn warn_delta_fallback(cells: &[Cell]) {
    if cells.iter().any(|c| !c.config.has_physicals()) {
        eprintln!(
            "warning: no physical inputs (b_v, b_p, b_t, capacity, prop_delay); \
             seconds use the Δ = 1 s/round fallback"
        );
    }
}

// ---------------------------------------------------------------------------
// Baselines

/// Which baseline protocol to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    Bitcoin,
    Ghost,
}

/// Runner keys of a baseline config file; everything else deserializes into
/// the protocol's own config struct.
pub struct BaselineFile {
    pub repetitions: u32,
    pub out: Option<PathBuf>,
    pub mode: ChainMode,
    pub rest: Value,
}

/// Splits a baseline document into runner keys and the protocol config.
pub fn parse_baseline_document(mut doc: Map<String, Value>) -> Result<BaselineFile, CliError> {
    let repetitions = match doc.remove("repetitions") {
        None => 1,
        Some(v) => match v.as_u64() {
            Some(n) if n >= 1 => n as u32,
            _ => {
                return Err(CliError::Config(format!(
                    "key 'repetitions': expected an integer >= 1, got {v}"
                )))
            }
        },
    };
    let out = match doc.remove("out") {
        None => None,
        Some(Value::String(s)) => Some(PathBuf::from(s)),
        Some(other) => {
            return Err(CliError::Config(format!(
                "key 'out': expected a string path, got {other}"
            )))
        }
    };
    let mode = match doc.remove("mode") {
        None => ChainMode::Passive,
        Some(Value::String(s)) if s == "passive" => ChainMode::Passive,
        Some(Value::String(s)) if s == "private" => ChainMode::Private,
        Some(other) => {
            return Err(CliError::Config(format!(
                "key 'mode': expected \"passive\" or \"private\", got {other}"
            )))
        }
    };
    Ok(BaselineFile {
        repetitions,
        out,
        mode,
        rest: Value::Object(doc),
    })
}

/// Runs the longest-chain baseline `repetitions` times with consecutive
/// seeds. The double-spend race counts one safety violation per successful
/// attack, budgeted against epsilon × (runs where the victim confirmed).
pub fn run_baseline_bitcoin(file: &BaselineFile) -> Result<Artifacts, CliError> {
    let base: ChainConfig = serde_json::from_value(file.rest.clone())
        .map_err(|e| CliError::Config(format!("config schema: {e}")))?;
    let strategy = match file.mode {
        ChainMode::Passive => "bitcoin_passive",
        ChainMode::Private => "bitcoin_private",
    };
    let results: Vec<(u64, ChainConfig, ChainResult)> = (0..file.repetitions as u64)
        .into_par_iter()
        .map(|run_id| {
            let mut config = base.clone();
            config.seed = config.seed.wrapping_add(run_id);
            let result = run_bitcoin(&config, file.mode)
                .map_err(|e| CliError::Config(e.to_string()))?;
            Ok((run_id, config, result))
        })
        .collect::<Result<_, CliError>>()?;

    let mut rows = Vec::with_capacity(results.len());
    let mut details = Vec::with_capacity(results.len());
    let mut violations = 0u64;
    let mut confirmed_instances = 0u64;
    for (run_id, config, result) in &results {
        let succeeded = result.attack.map(|a| a.succeeded).unwrap_or(false);
        violations += succeeded as u64;
        confirmed_instances += result
            .attack
            .map(|a| a.merchant_round.is_some() as u64)
            .unwrap_or(0);
        rows.push(Row {
            run_id: *run_id,
            seed: config.seed,
            beta: config.beta,
            beta_active: match file.mode {
                ChainMode::Passive => 0.0,
                ChainMode::Private => config.beta_active.unwrap_or(config.beta),
            },
            m: 1,
            strategy: strategy.to_string(),
            epsilon: Some(config.epsilon),
            mean_tx_latency_rounds: result.latency.map(|l| l.mean_rounds),
            // The baseline has no physical round length; Δ = 1 s/round.
            mean_tx_latency_seconds: result.latency.map(|l| l.mean_rounds),
            p95_latency: result.latency.map(|l| l.p95_rounds),
            list_confirm_mean_rounds: None,
            throughput_tx_per_round: result
                .latency
                .map(|l| l.confirmed as f64 / result.rounds as f64),
            nonredundant_fraction: None,
            safety_violations: succeeded as u64,
        });
        details.push(json!({
            "run_id": run_id,
            "seed": config.seed,
            "config": serde_json::to_value(config).expect("config serializes"),
            "result": serde_json::to_value(result).expect("result serializes"),
        }));
    }
    let allowed = (base.epsilon * confirmed_instances as f64).ceil() as u64;
    let summary = json!({
        "mode": "baseline",
        "protocol": "bitcoin",
        "strategy": strategy,
        "repetitions": file.repetitions,
        "k": results.first().map(|(_, c, _)| c.k()),
        "safety_budget": {
            "violations": violations,
            "allowed": allowed,
            "exceeded": violations > allowed,
        },
        "rows": details,
    });
    Ok(Artifacts {
        rows,
        summary,
        budget_violations: violations,
        budget_allowed: allowed,
    })
}

/// Runs the heaviest-subtree balancing baseline `repetitions` times. The
/// interesting output is structural (collapse round, fork lifetime), so the
/// latency columns stay empty and the summary carries the full outcomes.
pub fn run_baseline_ghost(file: &BaselineFile) -> Result<Artifacts, CliError> {
    let base: GhostConfig = serde_json::from_value(file.rest.clone())
        .map_err(|e| CliError::Config(format!("config schema: {e}")))?;
    let results: Vec<(u64, GhostConfig, GhostOutcome)> = (0..file.repetitions as u64)
        .into_par_iter()
        .map(|run_id| {
            let mut config = base.clone();
            config.seed = config.seed.wrapping_add(run_id);
            let outcome = run_ghost_balancing(&config)
                .map_err(|e| CliError::Config(e.to_string()))?;
            Ok((run_id, config, outcome))
        })
        .collect::<Result<_, CliError>>()?;

    let mut rows = Vec::with_capacity(results.len());
    let mut details = Vec::with_capacity(results.len());
    for (run_id, config, outcome) in &results {
        rows.push(Row {
            run_id: *run_id,
            seed: config.seed,
            beta: config.beta,
            beta_active: config.beta,
            m: 1,
            strategy: "ghost_balancing".to_string(),
            epsilon: None,
            mean_tx_latency_rounds: None,
            mean_tx_latency_seconds: None,
            p95_latency: None,
            list_confirm_mean_rounds: None,
            throughput_tx_per_round: None,
            nonredundant_fraction: None,
            safety_violations: 0,
        });
        details.push(json!({
            "run_id": run_id,
            "seed": config.seed,
            "config": serde_json::to_value(config).expect("config serializes"),
            "result": serde_json::to_value(outcome).expect("result serializes"),
        }));
    }
    let summary = json!({
        "mode": "baseline",
        "protocol": "ghost",
        "strategy": "ghost_balancing",
        "repetitions": file.repetitions,
        "rows": details,
    });
    Ok(Artifacts {
        rows,
        summary,
        budget_violations: 0,
        budget_allowed: 0,
    })
}

// ---------------------------------------------------------------------------
// Analytics

/// Evaluates one published curve (or all of them) on an endpoint-free beta
/// grid: the midpoints of `grid` equal slices of (0, 0.5). Returns CSV text
/// with header `curve,beta,value`; `grid = 0` yields the header alone.
pub fn analytics_table(
    curve: &str,
    grid: usize,
    overrides: &[String],
) -> Result<String, CliError> {
    let mut params = CurveParams::default();
    for spec in overrides {
        apply_param_override(&mut params, spec)?;
    }
    let curves: Vec<CurveId> = if curve == "all" {
        CurveId::ALL.to_vec()
    } else {
        match CurveId::parse(curve) {
            Some(c) => vec![c],
            None => {
                let known: Vec<&str> = CurveId::ALL.iter().map(|c| c.id()).collect();
                return Err(CliError::Config(format!(
                    "unknown curve '{curve}': expected one of {} or all",
                    known.join(" | ")
                )));
            }
        }
    };
    let mut out = String::from("curve,beta,value\n");
    for c in &curves {
        for i in 0..grid {
            let beta = 0.5 * (i as f64 + 0.5) / grid as f64;
            let value = curve_value(*c, beta, &params)
                .map_err(|e| CliError::Config(e.to_string()))?;
            out.push_str(&format!("{},{},{}\n", c.id(), beta, value));
        }
    }
    Ok(out)
}

fn apply_param_override(params: &mut CurveParams, spec: &str) -> Result<(), CliError> {
    let Some((key, raw)) = spec.split_once('=') else {
        return Err(CliError::Config(format!(
            "override '{spec}' is not of the form key=value"
        )));
    };
    let value: f64 = raw.parse().map_err(|_| {
        CliError::Config(format!("curve parameter '{key}': expected a number, got '{raw}'"))
    })?;
    match key {
        "q" => params.q = value,
        "ft_round" => params.ft_round = value,
        "tau_p_norm" => params.tau_p_norm = value,
        "d" => params.d = value,
        "b_v" => params.b_v = value,
        "capacity" => params.capacity = value,
        "epsilon" => params.epsilon = value,
        other => {
            return Err(CliError::Config(format!(
                "unknown curve parameter '{other}': expected q | ft_round | tau_p_norm \
                 | d | b_v | capacity | epsilon"
            )))
        }
    }
    Ok(())
}
