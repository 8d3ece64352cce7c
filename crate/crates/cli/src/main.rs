use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gmpp_cli::{cmd_run, cmd_sweep, cmd_verify, Exit};

#[derive(Parser)]
#[command(name = "gmpp", version, about = "Run, verify and sweep aggregation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the engine once and write the trace and report.
    Run {
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check the engine against the brute-force reference and the bounds.
    Verify {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run every configured horizon and write a summary table.
    Sweep {
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { Exit::Error as u8 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Run { config, out, seed } => cmd_run(&config, &out, seed),
        Command::Verify { config, seed } => cmd_verify(&config, seed),
        Command::Sweep { config, out, seed } => cmd_sweep(&config, &out, seed),
    };
    match result {
        Ok(exit) => ExitCode::from(exit as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(Exit::Error as u8)
        }
    }
}
