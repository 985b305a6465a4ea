use clap::{Parser, Subcommand};
use pnm::cli::{self, config::ExperimentConfig, Overrides};
use pnm::Error;
use std::path::PathBuf;
use std::process::ExitCode;

/// Probabilistic numerical PDE solver: experiment runner.
#[derive(Parser)]
#[command(name = "pnm", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory, overriding the config and PNM_OUT_DIR.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Bound on the sweep worker pool.
    #[arg(long, global = true)]
    max_workers: Option<usize>,
    /// Subset of sweep cells, e.g. 2:3,4:2.
    #[arg(long, global = true)]
    cells: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve every sweep cell of a config and emit metrics and fields.
    Run { config: PathBuf },
    /// Run the solver and Crank-Nicolson on identical budgets and compare.
    Compare { config: PathBuf },
    /// List the problem identifiers accepted in configs.
    ListProblems,
}

fn overrides(cli: &Cli) -> Result<Overrides, Error> {
    Ok(Overrides {
        out_dir: cli.out.clone(),
        max_workers: cli.max_workers,
        cells: cli.cells.as_deref().map(cli::parse_cells).transpose()?,
    })
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::UnknownProblem(_) => 2,
        Error::ReferenceNotConverged { .. } => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = (|| -> Result<(), Error> {
        let ov = overrides(&cli)?;
        match &cli.command {
            Command::Run { config } => {
                let cfg = ExperimentConfig::load(config)?;
                let dir = cli::run(&cfg, &ov)?;
                println!("wrote {}", dir.display());
            }
            Command::Compare { config } => {
                let cfg = ExperimentConfig::load(config)?;
                let dir = cli::compare(&cfg, &ov)?;
                println!("wrote {}", dir.display());
            }
            Command::ListProblems => {
                for id in cli::list_problems() {
                    println!("{id}");
                }
            }
        }
        Ok(())
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
