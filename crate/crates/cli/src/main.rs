mod args;
mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;
use entroseg::ErrorKind;

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Validation => 1,
        ErrorKind::Io => 2,
        ErrorKind::Invariant => 3,
    }
}

fn main() -> ExitCode {
    let raw: Vec<_> = std::env::args_os().collect();
    let argv = match config::expand(raw) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("entroseg: {e}");
            return ExitCode::from(exit_code(e.kind()));
        }
    };
    let cli = match args::Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("entroseg: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
