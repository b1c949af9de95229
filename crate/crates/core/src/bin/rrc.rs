use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rrc_core::harness::{self, HarnessError, Report, RunConfig, SummaryRow, SWEEP_EPISODES};
use rrc_core::rrc::gate_report;
use rrc_core::tasks::TaskKind;

const EXIT_FAILURE: u8 = 1;
const EXIT_GATE: u8 = 2;
const EXIT_CONFIG: u8 = 3;

#[derive(Parser)]
#[command(
    name = "rrc",
    version,
    about = "Hormonally regulated recursive reasoning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the stability and step-size gates.
    Check {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run a multi-seed experiment on one task.
    Run {
        #[arg(long)]
        task: TaskKind,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_warm_start: bool,
    },
    /// One-at-a-time sensitivity sweep of a parameter at -30%, 0 and +30%.
    Sweep {
        #[arg(long)]
        param: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = SWEEP_EPISODES)]
        episodes: usize,
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Rebuild summary and series CSVs from a run directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn load(path: Option<&Path>) -> Result<RunConfig, ExitCode> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| {
        eprintln!("error: cannot read {}: {e}", path.display());
        ExitCode::from(EXIT_CONFIG)
    })?;
    RunConfig::from_json(&text).map_err(|e| {
        eprintln!("error: {}: {e}", path.display());
        ExitCode::from(EXIT_CONFIG)
    })
}

fn fail(e: HarnessError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(match e {
        HarnessError::Gate(_) => EXIT_GATE,
        HarnessError::Config(_) | HarnessError::UnknownParam(_) => EXIT_CONFIG,
        _ => EXIT_FAILURE,
    })
}

/// Writes to stdout, ignoring a closed pipe.
fn say(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn print_report(report: &Report) {
    let mut text = format!("{}\n", SummaryRow::HEADER);
    for r in &report.rows {
        text.push_str(&r.csv_line());
        text.push('\n');
    }
    say(&text);
}

fn run(cli: Cli) -> Result<(), ExitCode> {
    match cli.command {
        Command::Check { config } => {
            let cfg = load(config.as_deref())?;
            if let Err(e) = cfg.engine.hormones.validate() {
                eprintln!("error: {e}");
                return Err(ExitCode::from(EXIT_CONFIG));
            }
            let (ok, text) = gate_report(&cfg.engine.hormones);
            say(&text);
            if ok {
                say("gates: pass\n");
                Ok(())
            } else {
                say("gates: FAIL\n");
                Err(ExitCode::from(EXIT_GATE))
            }
        }
        Command::Run {
            task,
            config,
            episodes,
            seeds,
            out,
            no_warm_start,
        } => {
            let mut cfg = load(config.as_deref())?;
            cfg.task = task;
            if let Some(n) = episodes {
                cfg.n_episodes = n;
            }
            if let Some(k) = seeds {
                cfg.n_seeds = k;
            }
            if no_warm_start {
                cfg.warm_start = false;
            }
            let report = harness::run_to_dir(&cfg, &out).map_err(fail)?;
            print_report(&report);
            Ok(())
        }
        Command::Sweep {
            param,
            config,
            out,
            episodes,
            seeds,
        } => {
            let mut cfg = load(config.as_deref())?;
            if let Some(k) = seeds {
                cfg.n_seeds = k;
            }
            let rows = harness::sweep_to_dir(&cfg, &param, episodes, &out).map_err(fail)?;
            say(&harness::sweep_csv(&rows));
            Ok(())
        }
        Command::Report { input } => {
            let report = harness::report_from_dir(&input).map_err(fail)?;
            print_report(&report);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => code,
    }
}
