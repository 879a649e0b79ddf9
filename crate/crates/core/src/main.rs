use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use covpol::experiments::{execute, ExperimentConfig, ExperimentKind};

/// Lockdown-diffusion model experiments.
#[derive(Debug, Parser)]
#[command(name = "covpol", version)]
struct Cli {
    /// base_run, pf_vs_ensemble, particle_count_sweep, da_window_sweep,
    /// calibrate or generate_synthetic
    experiment: ExperimentKind,
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of particles of the filter.
    #[arg(long)]
    particles: Option<usize>,
    /// Days between assimilation events.
    #[arg(long = "da-window")]
    da_window: Option<usize>,
    /// Number of runs of an unfiltered ensemble.
    #[arg(long)]
    ensemble: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let mut config = match ExperimentConfig::load(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    config.experiment = cli.experiment;
    if let Some(seed) = cli.seed {
        config.master_seed = seed;
    }
    if let Some(n) = cli.particles {
        config.filter.n_particles = n;
    }
    if let Some(w) = cli.da_window {
        config.filter.da_window = w;
    }
    if let Some(n) = cli.ensemble {
        config.ensemble_size = n;
    }
    if let Some(out) = cli.out {
        config.paths.output_dir = out;
    }

    match execute(&config) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
