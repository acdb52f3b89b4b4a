//! `mflq`: command-line front end.
//!
//! Exit codes: 0 success, 2 failed assumption check, 3 unreadable or
//! malformed problem file, 4 solver or simulation failure, 5 usage error.
//! Failures also print a one-line JSON record on stderr.

#![allow(non_snake_case)]

mod commands;
mod config;
mod failure;
mod output;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use config::{Cli, Command};
use failure::{Failure, EXIT_OK, EXIT_USAGE};

fn run(cli: Cli) -> Result<String, Failure> {
    match cli.command {
        Command::Validate(args) => commands::cmd_validate(&config::resolve(args)?),
        Command::Solve(args) => commands::cmd_solve(&config::resolve(args)?),
        Command::Turnpike(args) => commands::cmd_turnpike(&config::resolve(args)?),
        Command::Simulate(args) => commands::cmd_simulate(&config::resolve(args)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::from(EXIT_OK),
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => ExitCode::from(EXIT_USAGE),
                _ => {
                    eprintln!("{}", Failure::usage(e.kind().to_string()).to_json());
                    ExitCode::from(EXIT_USAGE)
                }
            };
        }
    };
    match run(cli) {
        Ok(stdout) => {
            print!("{stdout}");
            ExitCode::from(EXIT_OK)
        }
        Err(f) => {
            eprintln!("{}", f.to_json());
            ExitCode::from(f.code)
        }
    }
}
