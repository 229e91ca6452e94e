use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use calibfpa::calib::CorrectionMethod;
use calibfpa::recon::ReconMethod;
use calibfpa::sysmat::MatrixForm;

mod commands;
mod error;

use error::CliError;

#[derive(Parser)]
#[command(name = "calibfpa", version, about = "Compressive focal-plane-array simulation, calibration and reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML); flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; created if needed.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a random coded aperture.
    GenAperture {
        #[command(flatten)]
        common: Common,
        /// HR side length.
        #[arg(long)]
        size: Option<usize>,
        /// Block side (s = block²).
        #[arg(long)]
        block: Option<usize>,
        #[arg(long)]
        open_ratio: Option<f64>,
        /// Corner marker size in LR pixels; 0 disables.
        #[arg(long)]
        markers: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Acquire a raster-shifted snapshot stack of one scene.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Aperture directory from `gen-aperture`; drawn from the config otherwise.
        #[arg(long)]
        aperture: Option<PathBuf>,
        /// Grayscale image to crop; procedural scene otherwise.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long)]
        snapshots: Option<usize>,
        /// Peak SNR of the stack in dB; `inf` for noiseless.
        #[arg(long)]
        input_psnr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Synthesize train/val/test calibration samples.
    GenDataset {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scene_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        train: Option<usize>,
        #[arg(long)]
        val: Option<usize>,
        #[arg(long)]
        test: Option<usize>,
    },
    /// Train the calibration network on a dataset.
    TrainCalib {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Correct the measurements of a simulated acquisition.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Directory from `simulate`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        method: Option<CorrectionMethod>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Radius override for lucy and calibfpa.
        #[arg(long)]
        radius: Option<f64>,
    },
    /// Reconstruct the HR scene from a snapshot stack.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        /// Directory from `simulate`.
        #[arg(long)]
        input: PathBuf,
        /// Measurement stack to use instead of `<input>/measurements.cfpa`.
        #[arg(long)]
        measurements: Option<PathBuf>,
        #[arg(long)]
        method: Option<ReconMethod>,
        #[arg(long)]
        calibration: Option<CorrectionMethod>,
        #[arg(long)]
        matrix: Option<MatrixForm>,
        #[arg(long)]
        ridge: Option<f64>,
        /// Model the Airy blur in the dense matrix.
        #[arg(long)]
        model_blur: bool,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        radius: Option<f64>,
    },
    /// Sweep methods over radius bins, snapshot counts and noise levels.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated correction methods; an empty string evaluates none.
        #[arg(long)]
        methods: Option<String>,
        /// Comma-separated radius bin indices.
        #[arg(long, value_delimiter = ',')]
        bins: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        snapshots: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        input_psnr: Option<Vec<f64>>,
        /// Network bin offsets relative to the true bin.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        offsets: Option<Vec<isize>>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Skip HR reconstruction and score measurements only.
        #[arg(long)]
        no_recon: bool,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Write 16-bit PGM dumps of the first sample of every cell.
        #[arg(long)]
        dump_pgm: bool,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    use commands::*;
    match cli.command {
        Command::GenAperture { common, size, block, open_ratio, markers, seed } => {
            gen_aperture(&common.config, &common.out, GenApertureArgs { size, block, open_ratio, markers, seed })
        }
        Command::Simulate { common, aperture, scene, radius, snapshots, input_psnr, seed } => simulate(
            &common.config,
            &common.out,
            SimulateArgs { aperture, scene, radius, snapshots, input_psnr, seed },
        ),
        Command::GenDataset { common, scene_dir, seed, train, val, test } => {
            gen_dataset(&common.config, &common.out, GenDatasetArgs { scene_dir, seed, train, val, test })
        }
        Command::TrainCalib { common, dataset, epochs, batch_size, lr, seed } => {
            train_net(&common.config, &common.out, TrainArgs { dataset, epochs, batch_size, lr, seed })
        }
        Command::Calibrate { common, input, method, checkpoint, radius } => {
            calibrate(&common.config, &common.out, CalibrateArgs { input, method, checkpoint, radius })
        }
        Command::Reconstruct { common, input, measurements, method, calibration, matrix, ridge, model_blur, checkpoint, radius } => {
            reconstruct(
                &common.config,
                &common.out,
                ReconstructArgs { input, measurements, method, calibration, matrix, ridge, model_blur, checkpoint, radius },
            )
        }
        Command::Evaluate {
            common,
            methods,
            bins,
            snapshots,
            input_psnr,
            offsets,
            samples,
            seed,
            no_recon,
            checkpoint,
            dump_pgm,
        } => evaluate(
            &common.config,
            &common.out,
            EvaluateArgs { methods, bins, snapshots, input_psnr, offsets, samples, seed, no_recon, checkpoint, dump_pgm },
        ),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { error::EXIT_BAD_ARGS } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
