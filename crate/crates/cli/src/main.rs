use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dap_cli::{cmd_run, cmd_table1, cmd_validate, Exit, RunOverrides};

#[derive(Parser)]
#[command(name = "dap", version, about = "Decentralized approximate-projection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config: one CSV trace per repeat plus a summary.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_rounds: Option<usize>,
        /// Directory for traces and the summary.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rounds to convergence of the gossip SDP for N in {4, 15} on
    /// clique, cycle and star.
    Table1 {
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check weights and topology against the convergence hypotheses.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut stdout = std::io::stdout();
    let result = match cli.command {
        Command::Run {
            config,
            seed,
            max_rounds,
            out,
        } => cmd_run(&config, &RunOverrides { seed, max_rounds, out }, &mut stdout),
        Command::Table1 { repeats, out } => cmd_table1(repeats, out.as_deref(), &mut stdout),
        Command::Validate { config } => cmd_validate(&config, &mut stdout),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(Exit::Error as u8)
        }
    }
}
