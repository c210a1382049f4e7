use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use nonlocal_flow::config::{parse_config, CheckFlags, ScenarioConfig};
use nonlocal_flow::output::{emit_csv, to_json, write_json};
use nonlocal_flow::scenario::{
    predict_scenario, run_batch, thread_cap_from_env, ScenarioOutcome, ScenarioReport, Status,
};

const EXIT_CHECK_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(name = "nonlocal-flow", version, about = "Simulate and verify the nonlocal bistable flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate every scenario, run its enabled checks and write outputs.
    Run {
        config: PathBuf,
        /// Output directory for `<name>.csv`, `<name>.csv.final.csv` and `report.json`.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Print the predicted long-time limit of each scenario without integrating.
    Predict { config: PathBuf },
    /// Integrate every scenario with all checks enabled.
    Check {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Serialize)]
struct Report<'a> {
    scenarios: Vec<&'a ScenarioReport>,
    passed: bool,
}

fn load(path: &Path) -> Result<Vec<ScenarioConfig>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_config(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn summarize(outcomes: &[ScenarioOutcome]) {
    for o in outcomes {
        let r = &o.report;
        let counted = r.checks.iter().filter(|c| c.status != Status::Skipped).count();
        if r.passed {
            println!("PASS {} ({counted} checks)", r.name);
        } else {
            println!("FAIL {}", r.name);
        }
        for c in r.failed_checks() {
            println!("  {}: {}", c.check, c.detail);
        }
    }
}

fn write_outputs(outcomes: &[ScenarioOutcome], dir: &Path) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    for o in outcomes {
        if let Some(record) = &o.record {
            emit_csv(record, &dir.join(format!("{}.csv", o.report.name)))?;
        }
    }
    let report = Report {
        scenarios: outcomes.iter().map(|o| &o.report).collect(),
        passed: outcomes.iter().all(ScenarioOutcome::passed),
    };
    write_json(&report, &dir.join("report.json"))
}

fn simulate(config: &Path, flags: Option<CheckFlags>, out: Option<&Path>) -> ExitCode {
    let cfgs = match load(config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let outcomes = run_batch(&cfgs, flags, thread_cap_from_env());
    summarize(&outcomes);
    if let Some(dir) = out {
        if let Err(e) = write_outputs(&outcomes, dir) {
            eprintln!("error: writing {}: {e}", dir.display());
            return ExitCode::from(EXIT_USAGE);
        }
    }
    if outcomes.iter().all(ScenarioOutcome::passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_CHECK_FAILURE)
    }
}

fn predict(config: &Path) -> ExitCode {
    let cfgs = match load(config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let reports: Vec<ScenarioReport> = cfgs.iter().map(predict_scenario).collect();
    let passed = reports.iter().all(|r| r.passed);
    print!(
        "{}",
        to_json(&Report {
            scenarios: reports.iter().collect(),
            passed,
        })
    );
    if passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_CHECK_FAILURE)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match cli.command {
        Command::Run { config, out } => simulate(&config, None, Some(&out)),
        Command::Predict { config } => predict(&config),
        Command::Check { config, out } => simulate(&config, Some(CheckFlags::ALL), out.as_deref()),
    }
}
