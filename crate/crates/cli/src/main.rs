use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use spbn_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            if stdout.write_all(out.as_bytes()).and_then(|_| stdout.flush()).is_err() {
                return ExitCode::from(2);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("spbn: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
