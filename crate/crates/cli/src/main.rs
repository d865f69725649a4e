//! `l1emc` command-line tool.
//!
//! Exit codes: 0 for success or a passing check, 1 for a failing check,
//! 2 for usage, input or parameter errors.

mod cli;
mod quantity;
mod report;
mod run;

use std::io::Write;
use std::process::ExitCode;

use clap::Parser;

use crate::cli::{Cli, Command};
use crate::report::Format;
use crate::run::RunContext;

const EXIT_FAIL: u8 = 1;
const EXIT_ERROR: u8 = 2;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code().clamp(0, 255) as u8);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();

    match execute(&cli) {
        Ok((text, pass)) => {
            let mut out = std::io::stdout().lock();
            if out.write_all(text.as_bytes()).and_then(|_| out.flush()).is_err() {
                return ExitCode::from(EXIT_ERROR);
            }
            if pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAIL)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

/// Rendered output and whether the command counts as a pass.
fn execute(cli: &Cli) -> anyhow::Result<(String, bool)> {
    let ctx = |command| RunContext {
        seed: cli.seed,
        command,
    };
    Ok(match &cli.command {
        Command::Analyze(a) => (run::analyze(a, &ctx("analyze"))?.render(cli.format), true),
        Command::Limit(a) => {
            let (report, table) = run::limit(a, &ctx("limit"))?;
            let text = match cli.format {
                Format::Csv => table,
                f => report.render(f),
            };
            (text, true)
        }
        Command::Check(a) => {
            let (report, pass) = run::check(a, &ctx("check"))?;
            (report.render(cli.format), pass)
        }
        Command::Simulate(a) => (run::simulate_cmd(a, &ctx("simulate"))?.render(cli.format), true),
        Command::Sweep(a) => (run::sweep(a, &ctx("sweep"))?.render(cli.format), true),
    })
}
