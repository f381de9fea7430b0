//! `fiberm2`: mode tables, beam synthesis, dual-path M², dataset
//! generation, training, evaluation and figure CSVs.

mod commands;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fiberm2::{FiberSpec, ModeCase};
use serde::Serialize;

use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "fiberm2",
    version,
    about = "M² of few-mode fiber beams, computed and learned"
)]
struct Cli {
    /// Worker threads; 1 runs everything on the calling thread.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// List the guided LP modes of a fiber.
    Modes(ModesArgs),
    /// Render one random beam as a 16-bit PGM with a JSON sidecar.
    Synth(SynthArgs),
    /// M² of one random beam by the direct and caustic routes.
    M2(M2Args),
    /// Generate a labeled dataset directory.
    Gen(GenArgs),
    /// Train a regressor on online-generated samples.
    Train(TrainArgs),
    /// Predict M² from a PGM intensity image.
    Predict(PredictArgs),
    /// Mean PE of a model on a test set across noise levels.
    Eval(EvalArgs),
    /// Training-curve, PE-distribution and label-vs-prediction CSVs.
    Report(ReportArgs),
}

/// Step-index fiber and source.
#[derive(Debug, Clone, Args, Serialize)]
pub struct FiberArgs {
    /// Core diameter in μm.
    #[arg(long = "core-um", default_value_t = 25.0)]
    pub core_um: f64,
    #[arg(long, default_value_t = 0.08)]
    pub na: f64,
    #[arg(long = "wavelength-nm", default_value_t = 1064.0)]
    pub wavelength_nm: f64,
}

impl FiberArgs {
    pub fn spec(&self) -> fiberm2::Result<FiberSpec> {
        FiberSpec::new(self.core_um / 2.0, self.na, self.wavelength_nm / 1000.0)
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ModesArgs {
    #[command(flatten)]
    pub fiber: FiberArgs,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Number of excited modes: 3, 5, 6, 8 or 10.
    #[arg(long)]
    pub case: ModeCase,
    #[arg(long)]
    pub seed: u64,
    /// Image path; the sidecar goes next to it with a `.json` extension.
    #[arg(long)]
    pub out: PathBuf,
    /// Multiplicative detector noise σ.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = fiberm2::dataset::DEFAULT_RESOLUTION)]
    pub res: usize,
    #[command(flatten)]
    pub fiber: FiberArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Direct,
    Vcm,
    Both,
}

#[derive(Debug, Args, Serialize)]
pub struct M2Args {
    #[arg(long)]
    pub case: ModeCase,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = MethodArg::Both)]
    pub method: MethodArg,
    /// Propagation planes of the caustic fit.
    #[arg(long, default_value_t = fiberm2::beam_quality::VCM_PLANES)]
    pub planes: usize,
    #[arg(long)]
    pub json: bool,
    /// Noise levels `start:stop:step`; prints `sigma,mean_pe` CSV for a
    /// trained model instead of the beam's M².
    #[arg(long = "sweep-noise", requires = "model")]
    pub sweep_noise: Option<String>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Test set for the sweep; without it a held-out set is generated.
    #[arg(long)]
    pub testset: Option<PathBuf>,
    /// Size of the generated held-out set.
    #[arg(long, default_value_t = 200)]
    pub count: usize,
    /// Write the sweep CSV here instead of standard output.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub fiber: FiberArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    #[arg(long)]
    pub case: ModeCase,
    #[arg(long)]
    pub count: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = fiberm2::dataset::DEFAULT_RESOLUTION)]
    pub res: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Seed stream; training epoch `e` draws from stream `e`.
    #[arg(long, default_value_t = 0)]
    pub stream: u64,
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub fiber: FiberArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchArg {
    Reference,
    Vgg16,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub case: ModeCase,
    #[arg(long)]
    pub epochs: u64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = fiberm2::dataset::DEFAULT_RESOLUTION)]
    pub res: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = ArchArg::Reference)]
    pub arch: ArchArg,
    #[arg(long = "samples-per-epoch", default_value_t = fiberm2::dataset::SAMPLES_PER_EPOCH)]
    pub samples_per_epoch: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.0)]
    pub momentum: f64,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long = "lr-decayed", default_value_t = 0.001)]
    pub lr_decayed: f64,
    #[arg(long = "lr-decay-epoch", default_value_t = 20)]
    pub lr_decay_epoch: u64,
    /// Held-out samples scored after every epoch; 0 disables scoring.
    #[arg(long = "eval-count", default_value_t = 1000)]
    pub eval_count: usize,
    #[command(flatten)]
    pub fiber: FiberArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub testset: PathBuf,
    /// Noise levels, `start:stop:step` or a single value.
    #[arg(long, default_value = "0")]
    pub noise: String,
    #[arg(long = "noise-seed", default_value_t = 0)]
    pub noise_seed: u64,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub testset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Test samples in the label-vs-prediction table.
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let threads = cli.threads;
    match cli.command {
        Command::Modes(a) => commands::modes(&a),
        Command::Synth(a) => commands::synth(&a, threads),
        Command::M2(a) => commands::m2(&a, threads),
        Command::Gen(a) => commands::gen(&a, threads),
        Command::Train(a) => commands::train(&a, threads),
        Command::Predict(a) => commands::predict(&a),
        Command::Eval(a) => commands::eval(&a, threads),
        Command::Report(a) => commands::report(&a, threads),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            ExitCode::from(e.exit_code())
        }
    }
}
