//! Command-line entry point: run scenarios, verify stored golden traces,
//! and list the bundled scenarios.
//!
//! Exit codes: 0 on success, 1 on invariant violation (including replay
//! mismatches), 2 on configuration errors.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cellswarm::harness::{
    run_with_observer, summarize, trace_to_jsonl, ScenarioConfig, TraceEvent,
};

const BUNDLED: &[(&str, &str)] = &[
    ("battery_drop", include_str!("../scenarios/battery_drop.scenario")),
    ("deviant_leader", include_str!("../scenarios/deviant_leader.scenario")),
    ("leader_kill", include_str!("../scenarios/leader_kill.scenario")),
];

#[derive(Parser)]
#[command(name = "cellswarm", version, about = "Deterministic self-organizing cellular swarm simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and print a summary
    Run {
        /// Path to a scenario file, or the name of a bundled scenario
        scenario: String,
        /// Override the scenario's seed
        #[arg(long)]
        seed: Option<u64>,
        /// Write the trace as JSON lines to this path
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write run metrics as JSON to this path
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Stop the simulation at this virtual time instead of the
        /// scenario duration
        #[arg(long)]
        until: Option<f64>,
    },
    /// Re-run a scenario and byte-compare its trace against a golden file
    Verify {
        scenario: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Stored golden trace (JSON lines) to compare against
        #[arg(long)]
        golden: PathBuf,
    },
    /// Bundled scenario tools
    Scenarios {
        #[command(subcommand)]
        command: ScenariosCommand,
    },
}

#[derive(Subcommand)]
enum ScenariosCommand {
    /// List bundled scenarios
    List,
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { scenario, seed, trace, metrics, until } => {
            cmd_run(&scenario, seed, trace, metrics, until)
        }
        Command::Verify { scenario, seed, golden } => cmd_verify(&scenario, seed, &golden),
        Command::Scenarios { command: ScenariosCommand::List } => cmd_list(),
    }
}

fn load_scenario(name_or_path: &str) -> Result<ScenarioConfig, String> {
    let path = Path::new(name_or_path);
    let text = if path.exists() {
        fs::read_to_string(path).map_err(|e| format!("cannot read {name_or_path}: {e}"))?
    } else {
        let stem = name_or_path.trim_end_matches(".scenario");
        match BUNDLED.iter().find(|(name, _)| *name == stem) {
            Some((_, text)) => text.to_string(),
            None => {
                return Err(format!(
                    "{name_or_path} is neither a file nor a bundled scenario (try `scenarios list`)"
                ))
            }
        }
    };
    ScenarioConfig::from_json(text.as_bytes()).map_err(|e| e.to_string())
}

fn cmd_run(
    scenario: &str,
    seed: Option<u64>,
    trace_path: Option<PathBuf>,
    metrics_path: Option<PathBuf>,
    until: Option<f64>,
) -> ExitCode {
    let mut config = match load_scenario(scenario) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Some(until) = until {
        config.duration = until;
        if let Err(e) = config.validate() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }

    let mut trace_writer = match &trace_path {
        Some(path) => match fs::File::create(path) {
            Ok(f) => Some(BufWriter::new(f)),
            Err(e) => {
                eprintln!("error: cannot create {}: {e}", path.display());
                return ExitCode::from(2);
            }
        },
        None => None,
    };
    let observer = |ev: &TraceEvent| {
        if let Some(w) = trace_writer.as_mut() {
            let _ = writeln!(w, "{}", ev.to_canonical_line());
        }
    };

    let output = match run_with_observer(&config, observer) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };

    println!("scenario: {}  seed: {}", config.name, config.seed);
    print!("{}", summarize(&output.metrics));

    if let Some(path) = metrics_path {
        if let Err(e) = fs::write(&path, output.metrics.to_canonical_json()) {
            eprintln!("error: cannot write {}: {e}", path.display());
            return ExitCode::from(2);
        }
    }

    if output.metrics.violations.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn cmd_verify(scenario: &str, seed: Option<u64>, golden: &Path) -> ExitCode {
    let mut config = match load_scenario(scenario) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let golden_text = match fs::read_to_string(golden) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", golden.display());
            return ExitCode::from(2);
        }
    };
    let output = match cellswarm::harness::run(&config) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if !output.metrics.violations.is_empty() {
        for v in &output.metrics.violations {
            eprintln!("invariant violation: {v}");
        }
        return ExitCode::from(1);
    }

    let produced = trace_to_jsonl(&output.trace);
    if produced == golden_text {
        println!(
            "replay OK: {} events, byte-identical to {}",
            output.trace.len(),
            golden.display()
        );
        ExitCode::SUCCESS
    } else {
        let golden_lines: Vec<&str> = golden_text.lines().collect();
        let produced_lines: Vec<&str> = produced.lines().collect();
        let first_diff = golden_lines
            .iter()
            .zip(produced_lines.iter())
            .position(|(a, b)| a != b)
            .unwrap_or_else(|| golden_lines.len().min(produced_lines.len()));
        eprintln!(
            "replay MISMATCH at line {} (golden has {} lines, run produced {})",
            first_diff + 1,
            golden_lines.len(),
            produced_lines.len()
        );
        if let Some(line) = golden_lines.get(first_diff) {
            eprintln!("  golden:   {line}");
        }
        if let Some(line) = produced_lines.get(first_diff) {
            eprintln!("  produced: {line}");
        }
        ExitCode::from(1)
    }
}

fn cmd_list() -> ExitCode {
    for (name, text) in BUNDLED {
        match ScenarioConfig::from_json(text.as_bytes()) {
            Ok(config) => println!("{name}: {}", config.description),
            Err(e) => {
                eprintln!("error: bundled scenario {name} is invalid: {e}");
                return ExitCode::from(2);
            }
        }
    }
    ExitCode::SUCCESS
}
