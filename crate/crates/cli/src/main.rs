use std::io::Write;
use std::process::ExitCode;

use clap::Parser;

use gramspai_cli::args::Cli;
use gramspai_cli::run::{CliError, Context};

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(2);
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        eprintln!("error: thread pool: {e}");
        return ExitCode::from(2);
    }
    let ctx = Context {
        out_dir: cli.out_dir.clone(),
        threads: cli.threads,
    };
    match gramspai_cli::dispatch(&cli.command, &ctx) {
        Ok(summary) => {
            print_json(&summary);
            ExitCode::SUCCESS
        }
        Err(e) => {
            if let CliError::NotConverged { summary, .. } = &e {
                print_json(summary);
            }
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// Ignores a closed stdout so piping into `head` is not an error.
fn print_json(v: &serde_json::Value) {
    let text = serde_json::to_string_pretty(v).expect("plain data");
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}
