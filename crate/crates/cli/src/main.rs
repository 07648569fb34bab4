use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use lsvcal_cli::{cmd_calibrate, cmd_generate, cmd_price, cmd_report, CliError, RunConfig, THREADS_ENV};

#[derive(Parser)]
#[command(name = "lsvcal", version, about = "Calibrate a local-stochastic volatility model to option quotes")]
struct Cli {
    /// Run configuration (TOML)
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(short, long, global = true, default_value = "out")]
    output: PathBuf,
    /// Repeat for more log output
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Worker threads for the pricing loops
    #[arg(long, global = true, env = THREADS_ENV)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Price the configured quote grid under the data model
    Generate,
    /// Calibrate to a quotes file and write a result bundle
    Calibrate {
        #[arg(long)]
        quotes: PathBuf,
    },
    /// Price quotes under a calibrated surface
    Price {
        /// Bundle directory holding sigma2.field
        #[arg(long)]
        surfaces: PathBuf,
        #[arg(long)]
        quotes: PathBuf,
    },
    /// Write smiles and surface slices from a bundle
    Report {
        #[arg(long)]
        bundle: PathBuf,
    },
    /// Print a configuration with every default filled in
    Config {
        #[arg(long, default_value_t = 2)]
        example: u8,
    },
}

fn load(path: &Option<PathBuf>) -> Result<RunConfig, CliError> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::example2()),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Generate => {
            cmd_generate(&load(&cli.config)?, &cli.output)?;
        }
        Command::Calibrate { quotes } => {
            cmd_calibrate(&load(&cli.config)?, quotes, &cli.output)?;
        }
        Command::Price { surfaces, quotes } => {
            cmd_price(&load(&cli.config)?, surfaces, quotes, &cli.output)?;
        }
        Command::Report { bundle } => {
            cmd_report(bundle, &cli.output)?;
        }
        Command::Config { example } => {
            let c = if *example == 1 { RunConfig::example1() } else { RunConfig::example2() };
            print!("{}", c.to_toml());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            error!("thread pool: {e}");
            return ExitCode::from(3);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
