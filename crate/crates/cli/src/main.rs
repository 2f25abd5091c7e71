use clap::{Parser, Subcommand};
use magalign_cli::runner::CliError;
use std::path::PathBuf;
use std::process::ExitCode;

/// Multimodal attributed-graph embedding refinement: propagation-operator
/// learning, coupled smoothing with restart, trajectory readout, and the
/// accompanying diagnostics and numerical oracles.
#[derive(Parser)]
#[command(name = "magalign", version, about)]
struct Cli {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a config key, e.g. --set train.epochs=10 (repeatable).
    #[arg(long = "set", global = true)]
    overrides: Vec<String>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Override the training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Suppress log output.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate one experiment.
    Run,
    /// Dataset diagnostics: kNN overlap, purity, depth sweep, hard queries.
    Diagnose,
    /// Numerical verification of the smoothing dynamics.
    Oracles,
    /// Rerun the experiment over a grid of values for one config key.
    Sweep {
        /// Dotted config key, e.g. smoothing.depth.
        #[arg(long)]
        key: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
    },
    /// Independent runs over training seeds with mean/stddev aggregation.
    Multiseed {
        /// Comma-separated training seeds.
        #[arg(long, value_delimiter = ',', default_value = "43,44,45")]
        seeds: Vec<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "off" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(errors)) => {
            eprintln!("configuration error:");
            for e in &errors {
                eprintln!("  - {}", e);
            }
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("runtime error: {}", msg);
            ExitCode::from(3)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Run => {
            let cfg = magalign_cli::load_config(
                cli.config.as_deref(),
                &cli.overrides,
                cli.seed,
            )
            .map_err(CliError::Config)?;
            let results = magalign_cli::run_experiment(&cfg, &cli.out)?;
            if !cli.quiet {
                println!(
                    "test R@1 {:.2} | R@5 {:.2} | R@10 {:.2} | MRR {:.2} | MeanR {:.2} ({})",
                    results.test.averaged.r_at_1,
                    results.test.averaged.r_at_5,
                    results.test.averaged.r_at_10,
                    results.test.averaged.mrr,
                    results.test.averaged.mean_rank,
                    results.protocol
                );
            }
            Ok(())
        }
        Command::Diagnose => {
            let cfg = magalign_cli::load_config(
                cli.config.as_deref(),
                &cli.overrides,
                cli.seed,
            )
            .map_err(CliError::Config)?;
            magalign_cli::run_diagnostics(&cfg, &cli.out)?;
            Ok(())
        }
        Command::Oracles => {
            let cfg = magalign_cli::load_config(
                cli.config.as_deref(),
                &cli.overrides,
                cli.seed,
            )
            .map_err(CliError::Config)?;
            let report = magalign_cli::run_oracles(&cfg, &cli.out, cli.quiet)?;
            if !report.all_pass {
                return Err(CliError::Runtime(
                    "one or more oracle properties failed; see oracles.json".to_string(),
                ));
            }
            Ok(())
        }
        Command::Sweep { key, values } => {
            magalign_cli::run_sweep(
                cli.config.as_deref(),
                &cli.overrides,
                cli.seed,
                key,
                values,
                &cli.out,
            )?;
            Ok(())
        }
        Command::Multiseed { seeds } => {
            magalign_cli::run_multiseed(cli.config.as_deref(), &cli.overrides, seeds, &cli.out)?;
            Ok(())
        }
    }
}
