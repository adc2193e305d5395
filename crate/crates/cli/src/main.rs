use std::process::ExitCode;

use clap::Parser;
use npsurvey_cli::{cmd_analyze, cmd_fixture, cmd_simulate, report, Cli, CliError, Command, Format};

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Analyze(args) => {
            let report = cmd_analyze(&args)?;
            if !args.quiet {
                let text = report::emit_report(&report, Format::Table)?;
                print!("{}", String::from_utf8_lossy(&text));
            }
        }
        Command::Simulate(args) => {
            let tables = cmd_simulate(&args)?;
            eprintln!("wrote {} cell(s) to {}", tables.len(), args.out.display());
        }
        Command::Fixture(args) => {
            cmd_fixture(&args)?;
            eprintln!("wrote fixture to {}", args.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("npsurvey: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
