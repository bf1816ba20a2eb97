use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sgmnmf_cli::{
    cmd_evaluate, cmd_separate, cmd_simulate, load_eval_config, load_run_config, load_scene_spec, resolve_workers,
    CliError, WORKERS_ENV,
};

/// Blind source separation with sub-Gaussian joint-diagonalized MNMF.
#[derive(Parser)]
#[command(name = "sgmnmf", version)]
struct Cli {
    /// Worker threads (overridden by SGMNMF_WORKERS). `1` gives bit-reproducible runs.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic reverberant mixture with ground-truth images.
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Separate a multichannel mixture described by a run config.
    Separate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score separated sources and write metrics.json.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { spec, out } => {
            cmd_simulate(&load_scene_spec(&spec)?, &out)?;
        }
        Command::Separate { config } => cmd_separate(&load_run_config(&config)?)?,
        Command::Evaluate { config } => {
            let report = cmd_evaluate(&load_eval_config(&config)?)?;
            println!("mean SI-SDR improvement: {:.2} dB", report.mean_improvement);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let env = std::env::var(WORKERS_ENV).ok();
    let workers = match resolve_workers(cli.workers, env.as_deref()) {
        Ok(w) => w,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::FAILURE;
        }
    };
    match pool.install(|| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
