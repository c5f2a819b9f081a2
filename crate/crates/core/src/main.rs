use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use regulab::cli;

#[derive(Parser)]
#[command(name = "regulab", version, about = "Data-driven adaptive output regulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta: Option<Vec<f64>>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the excitation experiment and write the dataset.
    Collect(Common),
    /// Compute the data-driven gain for one theta.
    Synthesize(Common),
    /// Run the adaptive closed loop.
    Regulate(Common),
    /// Check the model-based constructions against the true plant.
    Verify(Common),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Collect(c) => cli::cmd_collect(&c.config, &c.out),
        Command::Synthesize(c) => cli::cmd_synthesize(&c.config, c.dataset.as_deref(), c.theta.as_deref(), &c.out),
        Command::Regulate(c) => cli::cmd_regulate(&c.config, c.dataset.as_deref(), &c.out),
        Command::Verify(c) => cli::cmd_verify(&c.config, Some(&c.out)),
    };
    match result {
        Ok(report) => {
            print!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code as u8)
        }
    }
}
