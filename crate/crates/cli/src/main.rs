use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tempered_transport_cli::runner::{self, RunOptions};

#[derive(Parser)]
#[command(name = "tt", about = "Annealed transport-map inference runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute an experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Stop cleanly after this many steps (exit 3; artifacts kept).
        #[arg(long)]
        halt_after: Option<usize>,
    },
    /// Continue an interrupted run from its directory.
    Resume { dir: PathBuf },
    /// Check a config without running anything.
    Validate { config: PathBuf },
    /// Regenerate density grid and sample dumps for a finished run.
    EmitPlots { dir: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, halt_after } => runner::run(
            &config,
            &RunOptions {
                halt_after,
                quiet: false,
            },
        )
        .map(|_| ()),
        Command::Resume { dir } => runner::resume(&dir, &RunOptions::default()).map(|_| ()),
        Command::Validate { config } => runner::validate(&config).map(|exp| {
            println!(
                "ok: problem {} with {} fidelity thresholds, output {:?}",
                exp.raw.problem,
                exp.anneal.thresholds.len(),
                exp.output
            );
        }),
        Command::EmitPlots { dir } => runner::emit_plots(&dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprint!("{}", err.report());
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
