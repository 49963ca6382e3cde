use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use muddy_vlsm::explorer::{ExplorationConfig, ModelKind, Overrides};
use muddy_vlsm::oracle;
use muddy_vlsm::report::{self, CheckRequest, RunError};
use muddy_vlsm::scenario::Scenario;
use muddy_vlsm::{ChildSet, PuzzleInstance};

const FAILED: u8 = 1;
const USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "muddy-vlsm", version, about = "Explore and check asynchronous muddy children protocols")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Explore one instance and check its properties
    Explore(ExploreArgs),
    /// Replay a scenario file step by step
    Replay(ReplayArgs),
    /// Run every property suite over one or all instances
    Check(CheckArgs),
    /// Solve an instance with the synchronous Kripke-model solution
    Oracle(OracleArgs),
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long, value_enum, default_value_t = ModelKind::Rounds)]
    model: ModelKind,
    /// Enable the jump transition (round-based model only)
    #[arg(long)]
    jump: bool,
    /// Number of children
    #[arg(long)]
    n: usize,
    /// Sweep bound for the valid-state closure
    #[arg(long)]
    bound: Option<usize>,
    /// Most messages a child may receive in the history model
    #[arg(long)]
    history_cap: Option<usize>,
    /// Same, when only current messages are delivered
    #[arg(long)]
    fresh_cap: Option<usize>,
    /// Same, for the two-party exchange explorations
    #[arg(long)]
    pair_cap: Option<usize>,
}

impl ModelArgs {
    fn model(&self) -> Result<ModelKind, String> {
        match (self.model, self.jump) {
            (ModelKind::Rounds, true) => Ok(ModelKind::RoundsJump),
            (ModelKind::History, true) => Err("--jump applies to the round-based model only".into()),
            (model, _) => Ok(model),
        }
    }

    fn overrides(&self) -> Overrides {
        Overrides { bound: self.bound, history_cap: self.history_cap, fresh_cap: self.fresh_cap, pair_cap: self.pair_cap }
    }
}

#[derive(Debug, Args)]
struct ExploreArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Muddy children, comma separated, e.g. 1,2
    #[arg(long, value_parser = parse_children)]
    muddy: ChildSet,
    /// Write the report here instead of standard output
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Sweep bound for the closure used to judge validity
    #[arg(long)]
    bound: Option<usize>,
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Check every instance with `n` children
    #[arg(long, conflicts_with = "muddy")]
    all_instances: bool,
    #[arg(long, value_parser = parse_children, required_unless_present = "all_instances")]
    muddy: Option<ChildSet>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, value_parser = parse_children)]
    muddy: ChildSet,
}

fn parse_children(text: &str) -> Result<ChildSet, String> {
    text.split(',')
        .map(str::trim)
        .filter(|part| !part.is_empty())
        .map(|part| {
            let child: usize = part.parse().map_err(|_| format!("`{part}` is not a child index"))?;
            if (1..=muddy_vlsm::puzzle::MAX_CHILDREN).contains(&child) {
                Ok(child)
            } else {
                Err(format!("child index {child} is out of range"))
            }
        })
        .collect()
}

enum Failure {
    Usage(String),
    Failed,
}

impl From<RunError> for Failure {
    fn from(err: RunError) -> Self {
        match err {
            RunError::Replay(e) => {
                eprintln!("replay failed: {e}");
                Failure::Failed
            }
            other => Failure::Usage(other.to_string()),
        }
    }
}

fn emit<T: Serialize>(value: &T, path: Option<&Path>) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("reports serialize") + "\n";
    match path {
        Some(path) => fs::write(path, text).map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn summarize(label: &str, report: &report::Report) {
    eprintln!(
        "{label}: {} states, {} messages, {} sweeps{}",
        report.states,
        report.messages,
        report.sweeps,
        if report.converged { "" } else { ", not converged" }
    );
    for (name, verdict) in &report.properties {
        let mark = if verdict.pass { "pass" } else { "FAIL" };
        match &verdict.detail {
            Some(detail) if !verdict.pass => eprintln!("  {mark} {name}: {detail}"),
            _ => eprintln!("  {mark} {name}"),
        }
    }
}

fn outcome(passed: bool) -> Result<(), Failure> {
    if passed {
        Ok(())
    } else {
        Err(Failure::Failed)
    }
}

fn run_explore(args: &ExploreArgs) -> Result<(), Failure> {
    let model = args.model.model().map_err(Failure::Usage)?;
    let instance = PuzzleInstance::new(args.model.n, args.muddy.iter()).map_err(|e| Failure::Usage(e.to_string()))?;
    let mut config = ExplorationConfig::new(model, &instance);
    args.model.overrides().apply(&mut config);
    let report = report::explore(&config)?;
    summarize(&format!("{} n={} muddy={}", model.name(), instance.n(), instance.muddy()), &report);
    emit(&report, args.report.as_deref())?;
    outcome(report.passed())
}

fn run_replay(args: &ReplayArgs) -> Result<(), Failure> {
    let text = fs::read_to_string(&args.scenario)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", args.scenario.display())))?;
    let scenario: Scenario = serde_json::from_str(&text)
        .map_err(|e| Failure::Usage(format!("{} is not a scenario: {e}", args.scenario.display())))?;
    let report = report::replay(&scenario, args.bound)?;
    eprintln!("replayed {} steps, statuses {}", report.steps, report.statuses);
    for (name, detail) in &report.violations {
        eprintln!("  FAIL {name}: {detail}");
    }
    emit(&report, args.report.as_deref())?;
    outcome(report.passed())
}

fn run_check(args: &CheckArgs) -> Result<(), Failure> {
    let model = args.model.model().map_err(Failure::Usage)?;
    let request = CheckRequest {
        model,
        n: args.model.n,
        muddy: if args.all_instances { None } else { args.muddy },
        overrides: args.model.overrides(),
    };
    let report = report::check(&request)?;
    for instance in &report.instances {
        summarize(&format!("{} n={} muddy={}", model.name(), instance.config.n, instance.config.muddy), instance);
    }
    for (name, verdict) in report.family.iter().flatten() {
        eprintln!("all initial states: {} {name}", if verdict.pass { "pass" } else { "FAIL" });
    }
    emit(&report, args.report.as_deref())?;
    outcome(report.pass)
}

#[derive(Serialize)]
struct OracleOutput {
    n: usize,
    muddy: ChildSet,
    rounds_to_yes: Vec<u32>,
    final_statuses: Vec<muddy_vlsm::Status>,
}

fn run_oracle(args: &OracleArgs) -> Result<(), Failure> {
    let usage = |e: oracle::OracleError| Failure::Usage(e.to_string());
    let model = oracle::build_kripke(args.n).map_err(usage)?;
    let outcome = oracle::sync_rounds(&model, args.muddy).map_err(usage)?;
    emit(
        &OracleOutput { n: args.n, muddy: args.muddy, rounds_to_yes: outcome.rounds_to_yes, final_statuses: outcome.final_statuses },
        None,
    )
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Explore(args) => run_explore(args),
        Command::Replay(args) => run_replay(args),
        Command::Check(args) => run_check(args),
        Command::Oracle(args) => run_oracle(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Failed) => ExitCode::from(FAILED),
        Err(Failure::Usage(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(USAGE)
        }
    }
}
