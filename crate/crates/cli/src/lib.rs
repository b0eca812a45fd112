//! Subcommand implementations for the `preemptsched` binary.
//!
//! Each command writes to the supplied streams and returns the process exit
//! status, so tests can drive them without spawning a process.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use preemptsched::bench::{self, BenchConfig};
use preemptsched::replay;
use preemptsched::scheduler::ScheduleOutcome;
use preemptsched::simulator::{render_snapshot, RunReport};
use preemptsched::{Scenario, ScenarioError, TieBreak};

pub const EXIT_OK: u8 = 0;
pub const EXIT_INPUT: u8 = 1;
pub const EXIT_SCHEDULING: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "preemptsched",
    version,
    about = "Preemptible-aware scheduling simulator"
)]
pub struct Cli {
    /// Break weight ties by lowest host id instead of a seeded draw.
    #[arg(long, global = true)]
    pub deterministic_ties: bool,
    /// Seed for tie-breaking, generated workloads and bench clusters.
    #[arg(long, global = true, env = "PREEMPTSCHED_SEED")]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario file and write the run report as JSON.
    Simulate(SimulateArgs),
    /// Replay the four bundled snapshots and compare victim sets.
    ReplayTables(ReplayArgs),
    /// Time scheduling decisions per (scheduler, scenario) cell.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub scenario: PathBuf,
    /// Report destination; stdout when absent.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    /// Print captured snapshots as tables on stderr.
    #[arg(long)]
    pub tables: bool,
    /// Also write termination events as CSV.
    #[arg(long, value_name = "PATH")]
    pub terminations_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Directory holding test1.json .. test4.json; bundled copies otherwise.
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 24)]
    pub hosts: usize,
    #[arg(long, default_value_t = 130)]
    pub calls: usize,
    #[arg(long, default_value_t = 10)]
    pub warmup: usize,
    /// CSV destination; printed after the table when absent.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Run cells concurrently. Numbers are not comparable across cells.
    #[arg(long)]
    pub parallel_cells: bool,
}

/// An input problem; always exit status 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputError(pub String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn input_err(e: impl fmt::Display) -> InputError {
    InputError(e.to_string())
}

fn write_file(path: &Path, contents: &str) -> Result<(), InputError> {
    std::fs::write(path, contents).map_err(|e| InputError(format!("{}: {e}", path.display())))
}

pub struct Globals {
    pub deterministic_ties: bool,
    pub seed: Option<u64>,
}

impl Globals {
    fn apply(&self, scenario: &mut Scenario) {
        if self.deterministic_ties {
            scenario.tie_break = TieBreak::LowestHostId;
        }
        if let Some(seed) = self.seed {
            scenario.reseed(seed);
        }
    }
}

/// Dispatches a parsed command line. Returns the exit status.
pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> u8 {
    let globals = Globals {
        deterministic_ties: cli.deterministic_ties,
        seed: cli.seed,
    };
    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a, &globals, out, err),
        Command::ReplayTables(a) => cmd_replay_tables(a, &globals, out),
        Command::Bench(a) => cmd_bench(a, &globals, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_INPUT
        }
    }
}

pub fn cmd_simulate(
    args: &SimulateArgs,
    globals: &Globals,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<u8, InputError> {
    let mut scenario = Scenario::load(&args.scenario).map_err(|e| match e {
        ScenarioError::Io { .. } => input_err(e),
        _ => InputError(format!("{}: {e}", args.scenario.display())),
    })?;
    globals.apply(&mut scenario);
    let report = preemptsched::run(&scenario)
        .map_err(|e| InputError(format!("{}: {e}", args.scenario.display())))?;

    match &args.out {
        Some(path) => write_file(path, &report.to_json())?,
        None => writeln!(out, "{}", report.to_json()).map_err(input_err)?,
    }
    if let Some(path) = &args.terminations_csv {
        write_file(path, &report.terminations_csv())?;
    }
    if args.tables {
        for snap in &report.snapshots {
            let _ = writeln!(err, "t={} request {}", snap.time, snap.request.id);
            let _ = write!(err, "{}", render_snapshot(snap));
        }
    }
    Ok(if scenario.is_replay() && replay_failed(&report) {
        let _ = writeln!(err, "NoValidHost: {}", args.scenario.display());
        EXIT_SCHEDULING
    } else {
        EXIT_OK
    })
}

fn replay_failed(report: &RunReport) -> bool {
    report
        .arrivals
        .iter()
        .any(|a| matches!(a.outcome, ScheduleOutcome::NoValidHost))
}

pub fn cmd_replay_tables(
    args: &ReplayArgs,
    globals: &Globals,
    out: &mut dyn Write,
) -> Result<u8, InputError> {
    let mut scenarios = match &args.fixtures {
        Some(dir) => replay::load_dir(dir).map_err(input_err)?,
        None => replay::bundled_scenarios(),
    };
    for (_, s) in &mut scenarios {
        globals.apply(s);
    }
    let checks = replay::check_all(&scenarios).map_err(input_err)?;
    for c in &checks {
        writeln!(out, "{c}").map_err(input_err)?;
    }
    let failed = checks.iter().filter(|c| !c.passed()).count();
    writeln!(
        out,
        "{} of {} snapshots match",
        checks.len() - failed,
        checks.len()
    )
    .map_err(input_err)?;
    Ok(if failed == 0 {
        EXIT_OK
    } else {
        EXIT_SCHEDULING
    })
}

pub fn cmd_bench(
    args: &BenchArgs,
    globals: &Globals,
    out: &mut dyn Write,
) -> Result<u8, InputError> {
    if args.hosts == 0 || args.calls == 0 {
        return Err(InputError("--hosts and --calls must be at least 1".into()));
    }
    let cfg = BenchConfig {
        hosts: args.hosts,
        calls: args.calls,
        warmup: args.warmup,
        seed: globals.seed.unwrap_or(0),
        tie_break: if globals.deterministic_ties {
            TieBreak::LowestHostId
        } else {
            TieBreak::SeededRandom
        },
    };
    let rows = if args.parallel_cells {
        bench::run_bench_parallel(&cfg)
    } else {
        bench::run_bench(&cfg)
    };
    write!(out, "{}", bench::render_table(&rows)).map_err(input_err)?;
    let csv = bench::to_csv(&rows);
    match &args.csv {
        Some(path) => write_file(path, &csv)?,
        None => write!(out, "\n{csv}").map_err(input_err)?,
    }
    Ok(EXIT_OK)
}
