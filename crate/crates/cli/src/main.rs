use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use anisoexp_cli::commands::{cmd_cascade, cmd_oracle_check, cmd_solve, cmd_sweep};
use anisoexp_cli::config::load_config;
use anisoexp_cli::CliError;

/// Anisotropic singular perturbation experiments: solve the perturbed
/// problem, build the expansion hierarchy, and verify convergence rates.
#[derive(Parser)]
#[command(name = "anisoexp", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (defaults to the config's [output] dir).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the perturbed problem at the first sweep ε and dump the
    /// solution nodes.
    Solve(RunArgs),
    /// Compute the expansion terms u0..ud and dump each as a nodal table.
    Cascade(RunArgs),
    /// Run the ε-sweep and check the fitted rates against the theory
    /// floors.
    Sweep(RunArgs),
    /// Compare the finite element solution against the exact separable
    /// oracle over grid refinements.
    #[command(name = "oracle-check")]
    OracleCheck(RunArgs),
}

fn run(args: &RunArgs, which: &Command) -> Result<(), CliError> {
    let cfg = load_config(&args.config)?;
    let exp = cfg.build()?;
    let out_dir = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.out_dir));
    match which {
        Command::Solve(_) => cmd_solve(&exp, &out_dir)?,
        Command::Cascade(_) => cmd_cascade(&exp, &out_dir)?,
        Command::Sweep(_) => cmd_sweep(&exp, &out_dir)?,
        Command::OracleCheck(_) => cmd_oracle_check(&exp, &out_dir)?,
    };
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let args = match &cli.command {
        Command::Solve(a) | Command::Cascade(a) | Command::Sweep(a) | Command::OracleCheck(a) => a,
    };
    match run(args, &cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
