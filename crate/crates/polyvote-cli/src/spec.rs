//! Experiment files: a flat JSON object whose keys are the simulation
//! config fields plus a handful of runner keys (`strategy`, `repetitions`,
//! `out`, `sweep`, `strategy_params`). Parsing is strict — an unknown key is
//! an error naming that key — and every parsed cell is validated, so a
//! stability violation surfaces here with both sides of the inequality.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use polyvote::adversary::make_strategy;
use polyvote::model::SimConfig;
use serde_json::{Map, Value};

/// What the invoking subcommand asked for; stored on the spec so downstream
/// code needs no extra plumbing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Simulate,
    Sweep,
    Baseline,
    Analytics,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Simulate => "simulate",
            Mode::Sweep => "sweep",
            Mode::Baseline => "baseline",
            Mode::Analytics => "analytics",
        })
    }
}

/// One runnable cell: a fully validated config plus the strategy driving it.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub strategy: String,
    pub config: SimConfig,
}

/// A parsed experiment file, expanded to its run cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub mode: Mode,
    /// Grid cells in deterministic order (sweep keys sorted, values in the
    /// order the file lists them); a single cell when there is no sweep.
    pub cells: Vec<Cell>,
    /// The swept keys and their values, empty outside sweep mode.
    pub sweep: BTreeMap<String, Vec<Value>>,
    pub repetitions: u32,
    pub out: Option<PathBuf>,
}

/// Everything that can go wrong before a run starts. The message is the
/// contract: schema problems name the offending key, and config violations
/// carry the library's own inequality text.
#[derive(Debug)]
pub struct ConfigFileError(pub String);

impl fmt::Display for ConfigFileError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigFileError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigFileError> {
    Err(ConfigFileError(msg.into()))
}

/// Applies one `--override key=value` to the raw document. The value is
/// parsed as JSON when possible (numbers, booleans, arrays, objects, null)
/// and falls back to a plain string, so `--override strategy=balancing`
/// and `--override beta=0.3` both do the obvious thing.
pub fn apply_override(doc: &mut Map<String, Value>, spec: &str) -> Result<(), ConfigFileError> {
    let Some((key, raw)) = spec.split_once('=') else {
        return err(format!("override '{spec}' is not of the form key=value"));
    };
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    doc.insert(key.to_string(), value);
    Ok(())
}

/// Reads and parses an experiment file. The mode is inferred from the
/// document: a non-empty `sweep` key means [`Mode::Sweep`], otherwise
/// [`Mode::Simulate`]; subcommands check the inferred mode against what they
/// expect.
pub fn parse_config(path: &Path) -> Result<ExperimentSpec, ConfigFileError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigFileError(format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text)
}

/// [`parse_config`] on an in-memory document.
pub fn parse_config_str(text: &str) -> Result<ExperimentSpec, ConfigFileError> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| ConfigFileError(format!("config is not valid JSON: {e}")))?;
    let Value::Object(doc) = value else {
        return err("config must be a JSON object of key: value pairs");
    };
    parse_document(doc)
}

/// Parses an already-loaded (and possibly overridden) document.
pub fn parse_document(doc: Map<String, Value>) -> Result<ExperimentSpec, ConfigFileError> {
    let mut doc = doc;

    let strategy = match doc.remove("strategy") {
        None => "passive".to_string(),
        Some(Value::String(s)) => s,
        Some(other) => return err(format!("key 'strategy': expected a string, got {other}")),
    };
    check_strategy(&strategy)?;

    if let Some(params) = doc.remove("strategy_params") {
        let Value::Object(map) = params else {
            return err(format!("key 'strategy_params': expected an object, got {params}"));
        };
        if let Some(key) = map.keys().next() {
            return err(format!(
                "key 'strategy_params.{key}': strategy '{strategy}' takes no parameters"
            ));
        }
    }

    let repetitions = match doc.remove("repetitions") {
        None => 1,
        Some(v) => match v.as_u64() {
            Some(n) if n >= 1 => u32::try_from(n)
                .map_err(|_| ConfigFileError(format!("key 'repetitions': {n} is too large")))?,
            _ => return err(format!("key 'repetitions': expected an integer >= 1, got {v}")),
        },
    };

    let out = match doc.remove("out") {
        None => None,
        Some(Value::String(s)) => Some(PathBuf::from(s)),
        Some(other) => return err(format!("key 'out': expected a string path, got {other}")),
    };

    let sweep = parse_sweep(doc.remove("sweep"))?;

    let base = Value::Object(doc);
    let mut cells = Vec::new();
    for assignment in grid(&sweep) {
        let mut cell_doc = base.clone();
        let mut cell_strategy = strategy.clone();
        for (key, value) in assignment {
            if key == "strategy" {
                let Value::String(s) = value else {
                    return err(format!("sweep key 'strategy': values must be strings, got {value}"));
                };
                check_strategy(&s)?;
                cell_strategy = s;
            } else {
                cell_doc
                    .as_object_mut()
                    .expect("base document is an object")
                    .insert(key, value);
            }
        }
        cells.push(Cell {
            strategy: cell_strategy,
            config: parse_sim_config(cell_doc)?,
        });
    }

    let mode = if sweep.is_empty() { Mode::Simulate } else { Mode::Sweep };
    Ok(ExperimentSpec {
        mode,
        cells,
        sweep,
        repetitions,
        out,
    })
}

fn check_strategy(name: &str) -> Result<(), ConfigFileError> {
    make_strategy(name)
        .map(|_| ())
        .map_err(|e| ConfigFileError(format!("key 'strategy': {e}")))
}

fn parse_sweep(
    raw: Option<Value>,
) -> Result<BTreeMap<String, Vec<Value>>, ConfigFileError> {
    let Some(raw) = raw else {
        return Ok(BTreeMap::new());
    };
    let Value::Object(map) = raw else {
        return err(format!("key 'sweep': expected an object of key: [values], got {raw}"));
    };
    let mut sweep = BTreeMap::new();
    for (key, values) in map {
        let Value::Array(values) = values else {
            return err(format!("sweep key '{key}': expected an array of values, got {values}"));
        };
        if values.is_empty() {
            return err(format!("sweep key '{key}': the value list must not be empty"));
        }
        sweep.insert(key, values);
    }
    Ok(sweep)
}

/// Cartesian product over the sweep grid: keys in sorted (BTreeMap) order,
/// the last key varying fastest, values in file order. An empty grid yields
/// one empty assignment.
fn grid(sweep: &BTreeMap<String, Vec<Value>>) -> Vec<Vec<(String, Value)>> {
    let mut assignments: Vec<Vec<(String, Value)>> = vec![Vec::new()];
    for (key, values) in sweep {
        let mut next = Vec::with_capacity(assignments.len() * values.len());
        for prefix in &assignments {
            for value in values {
                let mut a = prefix.clone();
                a.push((key.clone(), value.clone()));
                next.push(a);
            }
        }
        assignments = next;
    }
    assignments
}

/// Deserializes and validates one cell's simulation config. Serde surfaces
/// unknown keys by name; validation failures carry the library's message,
/// which for the stability constraint quotes both sides of the inequality.
fn parse_sim_config(doc: Value) -> Result<SimConfig, ConfigFileError> {
    let config: SimConfig = serde_json::from_value(doc)
        .map_err(|e| ConfigFileError(format!("config schema: {e}")))?;
    config
        .validate()
        .map_err(|e| ConfigFileError(e.to_string()))?;
    Ok(config)
}

/// The flat single-run document a row echoes: every simulation config field
/// at the top level plus the strategy that drove the run. Feeding the echo
/// back through [`parse_config_str`] reproduces the cell exactly.
pub fn echo_document(strategy: &str, config: &SimConfig) -> Map<String, Value> {
    let Value::Object(mut doc) = serde_json::to_value(config).expect("config serializes") else {
        unreachable!("a struct serializes to an object")
    };
    doc.insert("strategy".into(), Value::String(strategy.to_string()));
    doc.insert("repetitions".into(), Value::from(1u32));
    doc
}
