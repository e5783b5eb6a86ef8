use std::path::PathBuf;
use std::process::ExitCode;

use byzmed_cli::{cmd_list, cmd_run, cmd_verify, CliError, RunManifest};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "byzmed", version, about = "Byzantine-tolerant SGD experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment grid and write metrics CSVs.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        replicates: usize,
        /// Seed of replicate 0; defaults to the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print resilience bounds and counterexample checks.
    Verify {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        q: usize,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        gnorm: f64,
    },
    /// List aggregators, attacks and problems.
    List,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut stdout = std::io::stdout().lock();
    let result = match cli.command {
        Command::Run {
            config,
            out,
            replicates,
            seed,
        } => {
            let manifest = RunManifest {
                config_path: config,
                replicates,
                seed_base: seed,
                out_dir: out,
            };
            cmd_run(&manifest, &mut stdout).map(|_| ())
        }
        Command::Verify { n, q, d, sigma, gnorm } => {
            cmd_verify(n, q, d, sigma, gnorm).map(|report| print!("{}", report.text))
        }
        Command::List => cmd_list(&mut stdout).map_err(|e| CliError::Io(e.to_string())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
