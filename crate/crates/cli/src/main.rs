//! `tempagg` — train and evaluate temporal aggregate models.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 numeric failure.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use tempagg::dataio::DataError;
use tempagg::evaluate::EvalError;
use tempagg::model::ModelError;
use tempagg::sampler::SampleError;
use tempagg::tensor::TensorError;
use tempagg::trainer::TrainError;

/// Error categories mapped onto exit codes.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Data(msg) => write!(f, "data error: {msg}"),
            CliError::Numeric(msg) => write!(f, "numeric failure: {msg}"),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SampleError> for CliError {
    fn from(e: SampleError) -> Self {
        match e {
            SampleError::InvalidConfig(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match &e {
            ModelError::Tensor(TensorError::NonFinite { .. }) => CliError::Numeric(e.to_string()),
            ModelError::Tensor(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match &e {
            TrainError::NonFiniteLoss { .. } | TrainError::GradientShape { .. } => {
                CliError::Numeric(e.to_string())
            }
            TrainError::InvalidConfig(_) => CliError::Config(e.to_string()),
            TrainError::EmptyDataset => CliError::Data(e.to_string()),
            TrainError::Model(m) => CliError::from(m.clone()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "tempagg",
    about = "Multi-scale temporal aggregate models: synthesize data, train, predict, evaluate, fuse",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by train (and accepted in config files).
#[derive(Args, Debug)]
struct TrainArgs {
    /// Task: anticipation, recognition, or activity.
    #[arg(long)]
    task: Option<String>,
    /// Named preset: epic100-anticipation, epic100-recognition,
    /// breakfast-activity.
    #[arg(long)]
    preset: Option<String>,
    /// Layered key=value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of <video>.<modality>.tagf feature files.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Annotation csv.
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Subset lists (unseen participants, tail classes).
    #[arg(long)]
    subsets: Option<PathBuf>,
    /// Output directory for checkpoints and logs.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Feature modality: rgb, flow, obj, roi.
    #[arg(long)]
    modality: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr0: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Attention width (512 in the published configuration).
    #[arg(long)]
    hidden: Option<usize>,
    /// Projection width (512 in the published configuration).
    #[arg(long)]
    repr: Option<usize>,
    /// Action vocabulary size; inferred from annotations when omitted.
    #[arg(long)]
    classes: Option<usize>,
}

impl TrainArgs {
    fn overrides(&self) -> config::Overrides {
        config::Overrides {
            task: self.task.clone(),
            preset: self.preset.clone(),
            config: self.config.clone(),
            features: self.features.clone(),
            annotations: self.annotations.clone(),
            subsets: self.subsets.clone(),
            out: self.out.clone(),
            modality: self.modality.clone(),
            seed: self.seed,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr0: self.lr0,
            dropout: self.dropout,
            hidden: self.hidden,
            repr: self.repr,
            classes: self.classes,
        }
    }
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)] // parsed once at startup
enum Command {
    /// Generate a synthetic labeled corpus (features, annotations, subsets).
    Synth {
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 20)]
        videos: usize,
        #[arg(long, default_value_t = 5)]
        segments_per_video: usize,
        #[arg(long, default_value_t = 8.0)]
        fps: f32,
        /// Feature width; defaults to 4x classes.
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a per-modality model and write per-epoch checkpoints.
    Train(TrainArgs),
    /// Run a checkpoint over an annotation split and write predictions.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a prediction file against annotations.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        subsets: Option<PathBuf>,
        /// Optional TSV output of the metric table.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Average-vote fusion of per-modality prediction files.
    Fuse {
        /// Two or more prediction files.
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of all model gradients on a tiny config.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Sampled coordinates per parameter tensor (0 = all).
        #[arg(long, default_value_t = 8)]
        samples: usize,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth {
            classes,
            videos,
            segments_per_video,
            fps,
            dim,
            seed,
            out,
        } => commands::cmd_synth(classes, videos, segments_per_video, fps, dim, seed, &out),
        Command::Train(args) => {
            let cfg = config::resolve(&args.overrides())?;
            commands::cmd_train(&cfg)
        }
        Command::Predict {
            checkpoint,
            features,
            annotations,
            out,
        } => commands::cmd_predict(&checkpoint, &features, &annotations, &out),
        Command::Eval {
            predictions,
            annotations,
            subsets,
            out,
        } => commands::cmd_eval(&predictions, &annotations, subsets.as_deref(), out.as_deref()),
        Command::Fuse { inputs, out } => commands::cmd_fuse(&inputs, &out),
        Command::Gradcheck { seed, samples } => commands::cmd_gradcheck(seed, samples),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
