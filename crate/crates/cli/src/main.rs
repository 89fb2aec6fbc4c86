use std::process::ExitCode;

use evcache_cli::{parse_cli, run, CliError};

fn main() -> ExitCode {
    let result = parse_cli(std::env::args_os()).and_then(run);
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(CliError::Clap(e)) => e.exit(),
        Err(e) => {
            eprintln!("evcache: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
