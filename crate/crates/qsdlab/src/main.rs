use clap::{Args, Parser, Subcommand};
use qsdlab::config::Experiment;
use qsdlab::driver;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "qsdlab",
    version,
    about = "Absorbed-diffusion toolkit: quasi-stationary distributions, exit rates, and large-friction diagnostics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Path to the TOML experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Master seed, overriding the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for the CSV artifact, overriding the config file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
#[command(rename_all = "snake_case")]
enum Command {
    /// Closed-form reference checks for the Gaussian transition kernels.
    KernelsCheck(RunArgs),
    /// Grid eigensolve of the one-dimensional absorbed generator.
    Oracle(RunArgs),
    /// Single Fleming-Viot ensemble: decay rate and stationary profile.
    Fv(RunArgs),
    /// Fleming-Viot runs across a friction ladder on the rescaled clock.
    Sweep(RunArgs),
    /// Coupled kinetic and overdamped paths with the perturbed process.
    Coupling(RunArgs),
    /// Exit-time law from stationary-profile starts.
    ExitLaw(RunArgs),
    /// Long-run invariant-measure moment probe without absorption.
    Gibbs(RunArgs),
}

impl Command {
    fn split(&self) -> (Experiment, &RunArgs) {
        match self {
            Command::KernelsCheck(a) => (Experiment::KernelsCheck, a),
            Command::Oracle(a) => (Experiment::Oracle, a),
            Command::Fv(a) => (Experiment::Fv, a),
            Command::Sweep(a) => (Experiment::Sweep, a),
            Command::Coupling(a) => (Experiment::Coupling, a),
            Command::ExitLaw(a) => (Experiment::ExitLaw, a),
            Command::Gibbs(a) => (Experiment::Gibbs, a),
        }
    }
}

/// Applies `QSDLAB_THREADS` before any parallel work starts. Unset means
/// the hardware default.
fn init_threads() -> Result<(), ExitCode> {
    let Some(raw) = std::env::var_os("QSDLAB_THREADS") else {
        return Ok(());
    };
    let parsed = raw
        .to_str()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n >= 1);
    let Some(n) = parsed else {
        eprintln!("configuration error: QSDLAB_THREADS must be a positive integer");
        return Err(ExitCode::from(2));
    };
    #[cfg(feature = "parallel")]
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
        eprintln!("configuration error: cannot apply QSDLAB_THREADS={n}: {e}");
        return Err(ExitCode::from(2));
    }
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(code) = init_threads() {
        return code;
    }
    let (experiment, args) = cli.command.split();
    let text = match std::fs::read_to_string(&args.config) {
        Ok(text) => text,
        Err(e) => {
            eprintln!(
                "configuration error: cannot read {}: {e}",
                args.config.display()
            );
            return ExitCode::from(2);
        }
    };
    match driver::run_from_text(&text, experiment, args.seed, args.out.clone()) {
        Ok(summary) => {
            println!("{}", summary.line);
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("{err}");
            ExitCode::from(err.exit_code())
        }
    }
}
