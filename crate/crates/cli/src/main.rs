mod args;
mod commands;
mod report;

use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::error::ErrorKind;
use clap::Parser;

use args::Cli;
use commands::CliError;
use report::{write_report, Report, Timing, SCHEMA_VERSION};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;

fn run(argv: Vec<String>) -> u8 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
        }
    };
    let command = &cli.command;
    let started_unix_s = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64());
    let clock = Instant::now();
    let payload = match commands::dispatch(command) {
        Ok(p) => p,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            return EXIT_USAGE;
        }
        Err(CliError::Data(msg)) => {
            eprintln!("error: {msg}");
            return EXIT_DATA;
        }
    };
    let flags = serde_json::to_value(command)
        .ok()
        .and_then(|v| v.get(command.name()).cloned())
        .unwrap_or_default();
    let report = Report {
        schema: format!("choicectx.{}", command.name()),
        schema_version: SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION"),
        invocation: argv,
        flags,
        seed: commands::seed_of(command),
        timing: Timing {
            started_unix_s,
            elapsed_s: clock.elapsed().as_secs_f64(),
        },
        payload,
    };
    match write_report(&report, command.out().map(|p| p.as_path())) {
        Ok(()) => 0,
        Err(e) => {
            let target = command.out().map_or("stdout".to_owned(), |p| p.display().to_string());
            eprintln!("error: cannot write report to {target}: {e}");
            EXIT_DATA
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    ExitCode::from(run(std::env::args().collect()))
}
