use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "adsnn",
    version,
    about = "Train analog networks of adaptive spiking neurons, convert them and simulate the spiking versions"
)]
pub struct Cli {
    #[command(flatten)]
    pub globals: Globals,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Globals {
    /// Simulation time step (ms).
    #[arg(long, global = true, default_value_t = 1.0)]
    pub dt: f64,
    /// Presentation or simulation length (ms) [default: 500; xfer-plot 2000].
    #[arg(long, global = true)]
    pub duration: Option<f64>,
    /// Resting threshold; also sets m_f unless --mf is given.
    #[arg(long, global = true)]
    pub theta0: Option<f64>,
    /// Multiplicative threshold adaptation.
    #[arg(long, global = true)]
    pub mf: Option<f64>,
    /// Refractory decay time constant (ms).
    #[arg(long, global = true)]
    pub tau_eta: Option<f64>,
    /// Postsynaptic current decay time constant (ms).
    #[arg(long, global = true)]
    pub tau_beta: Option<f64>,
    /// Threshold decay time constant (ms).
    #[arg(long, global = true)]
    pub tau_gamma: Option<f64>,
    /// Membrane filter time constant (ms).
    #[arg(long, global = true)]
    pub tau_phi: Option<f64>,
    /// Seed for every random choice (splits, initialization, shuffling).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated resting thresholds for `sweep`.
    #[arg(long, global = true, value_delimiter = ',')]
    pub grid: Vec<f64>,
    /// Directory for artifacts [default: adsnn-out/<command>].
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
}

impl Globals {
    pub fn overrides_params(&self) -> bool {
        self.theta0.is_some()
            || self.mf.is_some()
            || self.tau_eta.is_some()
            || self.tau_beta.is_some()
            || self.tau_gamma.is_some()
            || self.tau_phi.is_some()
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an analog network on a dataset and export it.
    Train(TrainArgs),
    /// Fold batch-norm layers, check spiking conversion and export the result.
    Convert(ConvertArgs),
    /// Simulate the spiking network on a dataset.
    Run(SimArgs),
    /// Simulate the spiking network once per resting threshold in --grid.
    Sweep(SimArgs),
    /// Simulate with uncertainty-gated switching to high precision.
    Arousal(ArousalArgs),
    /// Tabulate the transfer function against single-neuron simulation.
    XferPlot(XferArgs),
    /// Record a single neuron under constant input.
    NeuronTrace(TraceArgs),
    /// Re-run a command from its run manifest and compare the artifacts.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    All,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// `iris`, `sonar` or a CSV file with a header, feature columns and a label column.
    #[arg(long)]
    pub dataset: Option<String>,
    /// IDX image file; used whole, without splitting.
    #[arg(long, requires = "idx_labels", conflicts_with = "dataset")]
    pub idx_images: Option<PathBuf>,
    /// IDX label file.
    #[arg(long, requires = "idx_images")]
    pub idx_labels: Option<PathBuf>,
    /// Part of the dataset to evaluate on.
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
    /// Test-set size for CSV files [default: 20% of the rows].
    #[arg(long)]
    pub test_size: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Layer widths, e.g. `4-60-60-3` or `[28x28-c32x3-m2-10]`.
    #[arg(long)]
    pub arch: String,
    #[arg(long, default_value_t = 800)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    /// Blob element type: float32 or float64.
    #[arg(long, default_value = "float32")]
    pub dtype: String,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ConvertArgs {
    /// Exchange-format model directory.
    #[arg(long)]
    pub model: PathBuf,
    /// Blob element type of the exported model.
    #[arg(long, default_value = "float32")]
    pub dtype: String,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimArgs {
    /// Exchange-format model directory.
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Membrane filter time constant of the output layer (ms).
    #[arg(long, default_value_t = 50.0)]
    pub readout_tau_phi: f64,
    /// Keep the duration fixed when tau_eta exceeds 50 ms.
    #[arg(long)]
    pub fixed_duration: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ArousalArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    /// Published settings: iris, sonar, mnist, cifar10, cifar100, ilsvrc
    /// [default: the dataset name].
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub theta0_lp: Option<f64>,
    #[arg(long)]
    pub theta0_hp: Option<f64>,
    /// Waiting time before accumulation (ms).
    #[arg(long)]
    pub t_sa: Option<f64>,
    /// Accumulation window (ms).
    #[arg(long)]
    pub window: Option<f64>,
    #[arg(long)]
    pub p1: Option<f64>,
    #[arg(long)]
    pub p2: Option<f64>,
    /// Extra presentation time for engaged inputs (ms).
    #[arg(long)]
    pub extension: Option<f64>,
    /// Fit the threshold intercept on the training split first.
    #[arg(long)]
    pub calibrate: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct XferArgs {
    #[arg(long, default_value_t = 0.0)]
    pub s_min: f64,
    #[arg(long, default_value_t = 3.0)]
    pub s_max: f64,
    #[arg(long, default_value_t = 61)]
    pub points: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TraceArgs {
    /// Constant activation driving the neuron.
    #[arg(long = "S", default_value_t = 1.0)]
    pub s: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReplayArgs {
    /// Run manifest file or the directory holding it.
    #[arg(long)]
    pub manifest: PathBuf,
}
