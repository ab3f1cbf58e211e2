use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rcgff_cli::{run, validate, RunOptions};

#[derive(Parser)]
#[command(name = "rcgff", version, about = "Experiments for the Gaussian free field with random conductances")]
struct Cli {
    /// Worker threads for Monte Carlo and solves (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment: env, potential, gff, percolation, disconnect, solidify or homogenize.
    Run {
        subcommand: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed_override: Option<u64>,
        /// Output directory (default: the config's `output`, relative to the config file).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Schema and cross-field checks without running solvers.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match cli.command {
        Command::Run { subcommand, config, seed_override, out } => {
            let opts = RunOptions { config: &config, seed_override, out: out.as_deref() };
            match run(&subcommand, &opts) {
                Ok(manifest) => {
                    println!("{}", manifest.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
        Command::Validate { config } => {
            let diags = validate(&config);
            if diags.is_empty() {
                println!("ok");
            }
            for d in diags {
                println!("{d}");
            }
            ExitCode::SUCCESS
        }
    }
}
