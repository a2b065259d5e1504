use std::process::ExitCode;

use clap::Parser;
use ugf_cli::{exit_code, run, Cli, EXIT_CONTRACT};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("UGF_LOG_LEVEL", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONTRACT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let code = match run(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}
