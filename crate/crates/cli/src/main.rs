use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dynprice_cli::{execute, ExperimentConfig, Job, Overrides, Sweep};

/// Optimal dynamic pricing for federated-learning client recruitment.
#[derive(Parser)]
#[command(name = "dynprice", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand)]
enum Command {
    /// Price schedule per slot and type.
    Price,
    /// Optimal recruitment threshold.
    Threshold,
    /// Optimal prefix of client types.
    SelectTypes,
    /// Monte Carlo check of the analytic cost.
    Simulate,
    /// Dynamic against the best flat price.
    Compare,
    /// Worst-case cost under noisy data sizes.
    Robustness,
}

#[derive(Args)]
struct Opts {
    /// TOML experiment file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    replicas: Option<usize>,
    /// Main output table; the manifest and extra tables are written beside it.
    #[arg(long, global = true)]
    out: Option<String>,
    /// Horizon in slots.
    #[arg(long = "T", global = true)]
    horizon: Option<u32>,
    /// Data-aging factor.
    #[arg(long, global = true)]
    r: Option<f64>,
    /// Arrival probability per slot.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Upper bound of the unit training cost.
    #[arg(long, global = true)]
    b: Option<f64>,
    /// Slope of the linear type family.
    #[arg(long, global = true)]
    mu: Option<f64>,
    /// Size step of the linear type family.
    #[arg(long, global = true)]
    beta: Option<f64>,
    /// Noise half-width for every type's data size.
    #[arg(long, global = true)]
    delta: Option<f64>,
    /// Fixed recruitment threshold instead of the optimum.
    #[arg(long = "t-th", global = true)]
    t_th: Option<u32>,
    /// Parameter sweep, `AXIS=a,b,c` or `AXIS=start:end[:step]` with AXIS one of T, r, mu, beta, delta.
    #[arg(long, global = true, value_parser = parse_sweep)]
    sweep: Option<Sweep>,
}

fn parse_sweep(s: &str) -> Result<Sweep, String> {
    s.parse().map_err(|e: dynprice_cli::CliError| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let job = match cli.command {
        Command::Price => Job::Price,
        Command::Threshold => Job::Threshold,
        Command::SelectTypes => Job::SelectTypes,
        Command::Simulate => Job::Simulate,
        Command::Compare => Job::Compare,
        Command::Robustness => Job::Robustness,
    };
    let o = cli.opts;
    let flags = Overrides {
        seed: o.seed,
        replicas: o.replicas,
        out: o.out,
        horizon: o.horizon,
        r: o.r,
        alpha: o.alpha,
        b: o.b,
        mu: o.mu,
        beta: o.beta,
        delta: o.delta,
        t_th: o.t_th,
        sweep: o.sweep,
    };
    let result = o
        .config
        .as_deref()
        .map_or_else(|| Ok(ExperimentConfig::default()), ExperimentConfig::load)
        .and_then(|config| execute(config, job, &flags));
    match result {
        Ok((paths, warnings)) => {
            for w in warnings {
                eprintln!("warning: {w}");
            }
            for p in &paths.tables {
                println!("{}", p.display());
            }
            println!("{}", paths.manifest.display());
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
