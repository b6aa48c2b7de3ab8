use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod shapes;
mod svg;

/// Limited-aperture inverse obstacle scattering: data generation, network
/// training, inversion and classical baselines.
#[derive(Debug, Parser)]
#[command(name = "ddm", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads. One thread gives bit-reproducible output.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; also settable through DDM_OUTPUT_DIR.
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Noise level applied to generated observations.
    #[arg(long, global = true)]
    pub sigma: Option<f64>,
    /// Observation arc in multiples of pi, e.g. "0:1/2".
    #[arg(long, global = true)]
    pub observation: Option<String>,
    /// Incidence arc in multiples of pi.
    #[arg(long, global = true)]
    pub incidence: Option<String>,
    /// Also draw SVG figures next to the CSV output.
    #[arg(long, global = true)]
    pub svg: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a training and test dataset.
    GenData {
        #[arg(long)]
        samples: Option<usize>,
        /// Dataset file; relative paths resolve against the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the networks on a dataset.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reconstruct one obstacle with a trained checkpoint.
    Invert {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        target: commands::Target,
    },
    /// Reconstruct one obstacle with the classical decomposition method.
    BaselineCdm {
        #[command(flatten)]
        target: commands::Target,
        #[arg(long, default_value_t = 500)]
        max_iter: usize,
    },
    /// Evaluate the direct sampling indicator on a 100 x 100 grid.
    BaselineDsm {
        #[command(flatten)]
        target: commands::Target,
    },
    /// Compare boundaries, or score a checkpoint on a dataset's test split.
    Eval {
        /// Exact shape, e.g. "pear" or "circle:1.5".
        #[arg(long, requires = "recovered", conflicts_with = "dataset")]
        exact: Option<String>,
        /// Recovered curve: a shape spec, or a JSON file written by invert or
        /// baseline-cdm (relative to the output directory).
        #[arg(long)]
        recovered: Option<String>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Monte Carlo study of the loss response to input noise.
    NoiseStudy {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Sample of the dataset to perturb.
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value_t = 2000)]
        trials: usize,
        /// Comma-separated noise levels.
        #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.02, 0.04, 0.08])]
        sigmas: Vec<f64>,
    },
}

fn run(cli: Cli) -> ddm_core::Result<()> {
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| ddm_core::Error::Config(e.to_string()))?;
    }
    let ctx = commands::Context::new(&cli.global)?;
    match cli.command {
        Command::GenData { samples, out } => commands::gen_data(&ctx, samples, out),
        Command::Train { dataset, epochs, batch_size, learning_rate, out } => {
            commands::train(&ctx, dataset, epochs, batch_size, learning_rate, out)
        }
        Command::Invert { checkpoint, target } => commands::invert(&ctx, checkpoint, &target),
        Command::BaselineCdm { target, max_iter } => commands::baseline_cdm(&ctx, &target, max_iter),
        Command::BaselineDsm { target } => commands::baseline_dsm(&ctx, &target),
        Command::Eval { exact, recovered, dataset, checkpoint } => commands::eval(&ctx, exact, recovered, dataset, checkpoint),
        Command::NoiseStudy { checkpoint, dataset, index, trials, sigmas } => {
            commands::noise_study(&ctx, checkpoint, dataset, index, trials, sigmas)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
