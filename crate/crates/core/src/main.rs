use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use maxloc::cli;

/// Monte Carlo checks of identities for the location of the maximum.
#[derive(Parser)]
#[command(name = "maxloc", version)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiments of a JSON config and write summary.json/.csv.
    Run {
        config: PathBuf,
        /// Worker threads; numeric output does not depend on it.
        #[arg(long, env = cli::WORKERS_ENV)]
        workers: Option<usize>,
        /// Output directory (overrides the config's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the available checks.
    List,
    /// Print a table of a results directory.
    Report { dir: PathBuf },
}

fn main() -> ExitCode {
    let args = Args::parse();
    let mut stdout = std::io::stdout().lock();
    let mut stderr = std::io::stderr().lock();
    let code = match args.command {
        Command::Run {
            config,
            workers,
            out,
        } => cli::cmd_run(&config, workers, out.as_deref(), &mut stdout, &mut stderr),
        Command::List => {
            cli::cmd_list(&mut stdout);
            cli::EXIT_OK
        }
        Command::Report { dir } => cli::cmd_report(&dir, &mut stdout, &mut stderr),
    };
    ExitCode::from(code as u8)
}
