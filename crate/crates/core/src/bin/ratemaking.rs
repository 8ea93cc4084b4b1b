use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ratemaking::cli::{self, Overrides, RunConfig};
use ratemaking::RatemakingError;

#[derive(Parser)]
#[command(name = "ratemaking", version, about = "Classification ratemaking toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the two-part GLM, ER, QR, PQR and QRII models
    Fit(Flags),
    /// Allocate loadings against the target total and price the tariff classes
    Rate(Flags),
    /// Run the Tweedie simulation study
    Simulate(Flags),
    /// Compare models with the ordered Lorenz curve and Gini index
    Gini(Flags),
    /// Check the coherence axioms of the sample expectile
    Coherence(Flags),
}

#[derive(Args)]
struct Flags {
    /// JSON run configuration
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long = "total-premium")]
    total_premium: Option<f64>,
    #[arg(long)]
    splits: Option<usize>,
    #[arg(long = "drop-infeasible")]
    drop_infeasible: bool,
}

fn config(flags: &Flags) -> Result<RunConfig, RatemakingError> {
    let mut config = match &flags.config {
        Some(path) => RunConfig::from_path(path)?,
        None => RunConfig::default(),
    };
    config.apply(&Overrides {
        seed: flags.seed,
        out: flags.out.clone(),
        tau: flags.tau,
        total_premium: flags.total_premium,
        splits: flags.splits,
        drop_infeasible: flags.drop_infeasible,
    });
    Ok(config)
}

fn run(command: &Command) -> Result<bool, RatemakingError> {
    let (flags, run): (&Flags, fn(&RunConfig) -> Result<(Vec<PathBuf>, bool), RatemakingError>) = match command {
        Command::Fit(f) => (f, |c| cli::cmd_fit(c).map(|p| (p, true))),
        Command::Rate(f) => (f, |c| cli::cmd_rate(c).map(|p| (p, true))),
        Command::Simulate(f) => (f, |c| cli::cmd_simulate(c).map(|p| (p, true))),
        Command::Gini(f) => (f, |c| cli::cmd_gini(c).map(|p| (p, true))),
        Command::Coherence(f) => (f, cli::cmd_coherence),
    };
    let (files, ok) = run(&config(flags)?)?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(ok)
}

fn main() -> ExitCode {
    let args = Cli::parse();
    match run(&args.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: coherence violations found; see coherence.json");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 1 })
        }
    }
}
