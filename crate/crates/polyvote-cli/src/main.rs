//! The `polyvote` binary: `simulate`, `sweep`, `baseline`, and `analytics`
//! subcommands over the experiment-runner library. Exit codes: 0 success,
//! 2 config error, 3 strategy fault, 4 safety-violation budget exceeded.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use polyvote_cli::runner::{
    self, analytics_table, check_budget, emit, parse_baseline_document, run_baseline_bitcoin,
    run_baseline_ghost, run_spec, warn_delta_fallback, CliError,
};
use polyvote_cli::spec::{apply_override, parse_document, Mode};
use serde_json::{Map, Value};

#[derive(Parser)]
#[command(
    name = "polyvote",
    version,
    about = "Round-synchronous simulator and analytics for decoupled \
             proof-of-work consensus"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Experiment file: a flat JSON object of config keys.
    config: PathBuf,
    /// Replaces the base seed before expansion.
    #[arg(long)]
    seed: Option<u64>,
    /// CSV output path (stdout when omitted); the JSON summary lands next
    /// to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// key=value applied to the document before parsing; repeatable. Values
    /// parse as JSON when possible, else as strings.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Protocol {
    Bitcoin,
    Ghost,
}

#[derive(Subcommand)]
enum Command {
    /// Runs one configuration (times `repetitions`) and emits its rows.
    Simulate(#[command(flatten)] RunArgs),
    /// Expands the config's sweep grid and runs every cell × repetition.
    Sweep(#[command(flatten)] RunArgs),
    /// Runs a single-chain reference protocol on its own config schema.
    Baseline {
        #[arg(long, value_enum)]
        protocol: Protocol,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Evaluates closed-form curves on a beta grid (no simulation).
    Analytics {
        /// Curve id, or `all`.
        #[arg(long)]
        curve: String,
        /// Number of beta points: midpoints of equal slices of (0, 0.5).
        #[arg(long)]
        grid: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        /// key=value curve parameter; repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate(args) => run_experiment(args, Mode::Simulate),
        Command::Sweep(args) => run_experiment(args, Mode::Sweep),
        Command::Baseline { protocol, args } => run_baseline(protocol, args),
        Command::Analytics { curve, grid, out, overrides } => {
            let table = analytics_table(&curve, grid, &overrides)?;
            match out {
                None => {
                    print!("{table}");
                    Ok(())
                }
                Some(path) => std::fs::write(&path, table)
                    .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display()))),
            }
        }
    }
}

/// Loads a JSON object, applying `--override` then `--seed`.
fn load_document(args: &RunArgs) -> Result<Map<String, Value>, CliError> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", args.config.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("config is not valid JSON: {e}")))?;
    let Value::Object(mut doc) = value else {
        return Err(CliError::Config(
            "config must be a JSON object of key: value pairs".into(),
        ));
    };
    for spec in &args.overrides {
        apply_override(&mut doc, spec)?;
    }
    if let Some(seed) = args.seed {
        doc.insert("seed".into(), Value::from(seed));
    }
    Ok(doc)
}

fn run_experiment(args: RunArgs, want: Mode) -> Result<(), CliError> {
    let doc = load_document(&args)?;
    let spec = parse_document(doc)?;
    match (want, spec.mode) {
        (Mode::Simulate, Mode::Sweep) => {
            return Err(CliError::Config(
                "config has a sweep grid; use the sweep subcommand".into(),
            ))
        }
        (Mode::Sweep, Mode::Simulate) => {
            return Err(CliError::Config(
                "config has no sweep grid; use the simulate subcommand".into(),
            ))
        }
        _ => {}
    }
    warn_delta_fallback(&spec.cells);
    let artifacts = run_spec(&spec)?;
    let out = args.out.or_else(|| spec.out.clone());
    emit(&artifacts, out.as_deref())?;
    report(&artifacts, out.as_deref());
    check_budget(&artifacts)
}

fn run_baseline(protocol: Protocol, args: RunArgs) -> Result<(), CliError> {
    let doc = load_document(&args)?;
    let file = parse_baseline_document(doc)?;
    let artifacts = match protocol {
        Protocol::Bitcoin => run_baseline_bitcoin(&file)?,
        Protocol::Ghost => run_baseline_ghost(&file)?,
    };
    let out = args.out.or_else(|| file.out.clone());
    emit(&artifacts, out.as_deref())?;
    report(&artifacts, out.as_deref());
    check_budget(&artifacts)
}

/// One status line on stderr so file-writing invocations stay quiet on
/// stdout and stdout-writing ones do not mix tables with chatter.
fn report(artifacts: &runner::Artifacts, out: Option<&Path>) {
    if let Some(path) = out {
        eprintln!(
            "wrote {} rows to {} (summary: {})",
            artifacts.rows.len(),
            path.display(),
            runner::summary_path(path).display()
        );
    }
    if artifacts.budget_exceeded() {
        eprintln!(
            "safety: {} violations exceed the allowed {}",
            artifacts.budget_violations, artifacts.budget_allowed
        );
    }
}
