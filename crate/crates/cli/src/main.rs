use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod output;

#[derive(Parser, Debug)]
#[command(name = "lawpal", version, about = "Approximate likelihoods, filters and samplers for compartmental epidemic models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a latent trajectory and its incidence series.
    Simulate(Common),
    /// Run the approximate filter and write per-step state.
    Filter(Common),
    /// Approximate log-likelihood of a series.
    Loglik(Common),
    /// Bootstrap particle filter log-likelihood estimate.
    PfLoglik(Common),
    /// Coordinate-ascent maximum likelihood, on data or on replicated simulations.
    FitMle(Common),
    /// Random-walk Metropolis on the approximate posterior.
    FitMh(Common),
    /// Particle marginal Metropolis-Hastings.
    FitPmmh(Common),
    /// Deterministic large-population limit.
    Limit(Common),
    /// Time the approximate likelihood against the particle filter.
    Bench(Common),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Incidence CSV with header `t,y`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long)]
    pub particles: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Worker threads for replicate fan-out.
    #[arg(long)]
    pub threads: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LAWPAL_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let result = match &cli.command {
        Command::Simulate(c) => commands::simulate(c),
        Command::Filter(c) => commands::filter(c, false),
        Command::Loglik(c) => commands::filter(c, true),
        Command::PfLoglik(c) => commands::pf_loglik(c),
        Command::FitMle(c) => commands::fit_mle(c),
        Command::FitMh(c) => commands::fit_mh(c),
        Command::FitPmmh(c) => commands::fit_pmmh(c),
        Command::Limit(c) => commands::limit(c),
        Command::Bench(c) => commands::bench(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lawpal: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
