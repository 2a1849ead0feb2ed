use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use coarse_forge::{configure_threads_from_env, experiments, ExperimentConfig};

#[derive(Parser)]
#[command(name = "coarse-forge", about = "Effective-dynamics experiments for non-reversible SDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a flat key-value config file.
    Run {
        /// Path to the config file.
        config: PathBuf,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Suppress the summary table on stdout.
        #[arg(long)]
        quiet: bool,
    },
}

fn main() -> ExitCode {
    configure_threads_from_env();
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, out, seed, quiet } => {
            let mut cfg = match ExperimentConfig::from_file(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("{e}");
                    return ExitCode::from(e.exit_code());
                }
            };
            if let Some(dir) = out {
                cfg.out_dir = dir;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            match experiments::run(&cfg) {
                Ok(result) => {
                    if !quiet {
                        print!("{}", result.text_table());
                    }
                    if result.passed() {
                        ExitCode::SUCCESS
                    } else {
                        eprintln!("tolerance failure in experiment '{}'", result.experiment);
                        ExitCode::from(1)
                    }
                }
                Err(e) => {
                    eprintln!("{e}");
                    ExitCode::from(e.exit_code())
                }
            }
        }
    }
}
