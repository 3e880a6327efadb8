use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use silbo::experiment::{dump_embedding, load_spec, run_experiment};

#[derive(Parser)]
#[command(
    name = "silbo",
    version,
    about = "High-dimensional Bayesian optimization experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every method and replication of an experiment spec.
    Run {
        #[arg(long)]
        spec: PathBuf,
        /// Replications run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Output directory (overrides the spec).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Dotted-key override, e.g. `optimizer.iterations=20`.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Learn an embedding from a random design and write (z, y) to CSV.
    DumpEmbedding {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            spec,
            jobs,
            out,
            overrides,
        } => load_spec(&spec, &overrides).and_then(|mut spec| {
            if let Some(dir) = out {
                spec.output_dir = dir;
            }
            let outcome = run_experiment(&spec, jobs)?;
            let failed = outcome.failures();
            println!(
                "{} runs, {failed} failed; results in {}",
                outcome.manifest.runs.len(),
                spec.output_dir.display()
            );
            Ok(failed == outcome.manifest.runs.len())
        }),
        Command::DumpEmbedding {
            spec,
            out,
            overrides,
        } => load_spec(&spec, &overrides).and_then(|mut spec| {
            if let Some(dir) = out {
                spec.output_dir = dir;
            }
            let path = dump_embedding(&spec)?;
            println!("wrote {}", path.display());
            Ok(false)
        }),
    };
    match result {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => {
            error!("every run failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            error!("{e}");
            ExitCode::FAILURE
        }
    }
}
