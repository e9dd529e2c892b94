use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use tputfl_core::eval::ModelKind;
use tputfl_core::nn::{DenseOwnership, Dtype};
use tputfl_core::preprocess::ScalerMode;
use tputfl_core::trace::SourceTag;

/// Federated cellular throughput prediction and ABR streaming simulation.
///
/// Every flag can also be set through an environment variable with the
/// `TFL_` prefix, for example `TFL_SEED=3` or `TFL_OUT=runs/a`.
#[derive(Parser, Debug)]
#[command(name = "tputfl", version)]
pub struct Cli {
    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Serialize, Deserialize, Clone, Debug)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Parse a raw trace into the canonical CSV form and summarize it.
    Ingest(IngestArgs),
    /// Generate deterministic synthetic traces.
    Synth(SynthArgs),
    /// Train the bootstrap model on a legacy-network trace.
    Bootstrap(BootstrapArgs),
    /// Run federated rounds in-process, or serve them over TCP.
    Federate(FederateArgs),
    /// Join a served federation as one client.
    Client(ClientArgs),
    /// Score a weight file on a dataset's test split.
    Eval(EvalArgs),
    /// Train on each dataset, test on every dataset.
    CrossEval(CrossEvalArgs),
    /// Stream a video over throughput traces with MPC and compare predictors.
    AbrSim(AbrSimArgs),
    /// Re-run a command from its manifest and verify the output digests.
    Replay(ReplayArgs),
}

#[derive(Args, Serialize, Deserialize, Clone, Debug)]
pub struct OutArgs {
    /// Output directory; created if missing.
    #[arg(long, env = "TFL_OUT")]
    pub out: PathBuf,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug)]
pub struct DataArgs {
    /// Source format of the input CSVs. Canonical CSVs parse under any tag.
    #[arg(long, default_value = "SYNTH", env = "TFL_SOURCE_TAG")]
    pub source_tag: SourceTag,
    /// Comma-separated model features, in order.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "speed,rsrp,handover_count,distance_to_cell,data_state",
        env = "TFL_FEATURES"
    )]
    pub features: Vec<String>,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug)]
pub struct WindowArgs {
    /// Past timesteps per sample.
    #[arg(long, visible_alias = "H", default_value_t = 5, env = "TFL_HISTORY")]
    pub history: usize,
    /// Future steps averaged into the target.
    #[arg(long, visible_alias = "W", default_value_t = 1, env = "TFL_HORIZON")]
    pub horizon: usize,
    /// Gaussian smoothing width in samples.
    #[arg(long, default_value_t = 2.0, env = "TFL_SIGMA")]
    pub sigma: f64,
    /// Chronological train share of every trace.
    #[arg(long, default_value_t = 0.7, env = "TFL_TRAIN_FRACTION")]
    pub train_fraction: f64,
    #[arg(long, value_enum, default_value_t = ScalerArg::Minmax, env = "TFL_SCALER")]
    pub scaler: ScalerArg,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug)]
pub struct TrainArgs {
    /// Training epochs (local epochs per round when federating).
    #[arg(long, visible_alias = "local-epochs", default_value_t = 25, env = "TFL_EPOCHS")]
    pub epochs: usize,
    #[arg(long, default_value_t = 32, env = "TFL_BATCH_SIZE")]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3, env = "TFL_LEARNING_RATE")]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 0.2, env = "TFL_DROPOUT")]
    pub dropout: f64,
    #[arg(long, default_value_t = 0, env = "TFL_SEED")]
    pub seed: u64,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug)]
pub struct IngestArgs {
    #[arg(long, env = "TFL_INPUT")]
    pub input: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = RegimeArg::Smooth, env = "TFL_REGIME")]
    pub regime: RegimeArg,
    /// Seed of the first trace; trace k uses seed + k.
    #[arg(long, default_value_t = 0, env = "TFL_SEED")]
    pub seed: u64,
    /// Seconds per trace.
    #[arg(long, default_value_t = 1000, env = "TFL_LENGTH")]
    pub length: usize,
    #[arg(long, default_value_t = 1, env = "TFL_COUNT")]
    pub count: usize,
    /// Linear regime: throughput intercept in Mbps.
    #[arg(long, default_value_t = 40.0, allow_negative_numbers = true)]
    pub intercept: f64,
    /// Linear regime: weights of speed, signal and distance drivers.
    #[arg(long, value_delimiter = ',', default_values_t = [8.0, -6.0, 4.0], allow_hyphen_values = true)]
    pub weights: Vec<f64>,
    /// Linear regime: uniform noise half-width in Mbps.
    #[arg(long, default_value_t = 2.0)]
    pub noise: f64,
    /// Linear regime: AR(1) coefficient of the drivers.
    #[arg(long, default_value_t = 0.5)]
    pub persistence: f64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug)]
pub struct BootstrapArgs {
    /// Legacy-network training trace.
    #[arg(long, env = "TFL_TRAIN")]
    pub train: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub window: WindowArgs,
    #[command(flatten)]
    pub training: TrainArgs,
    /// Width of both LSTM layers.
    #[arg(long, default_value_t = 128, env = "TFL_HIDDEN")]
    pub hidden: usize,
    /// Whether the dense head is averaged with the first LSTM layer.
    #[arg(long, value_enum, default_value_t = DenseArg::Local, env = "TFL_DENSE")]
    pub dense: DenseArg,
    #[arg(long, value_enum, default_value_t = DtypeArg::F64, env = "TFL_DTYPE")]
    pub dtype: DtypeArg,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug)]
pub struct FederateArgs {
    /// Bootstrap weight file.
    #[arg(long, env = "TFL_BOOTSTRAP")]
    pub bootstrap: PathBuf,
    /// Directory of client CSVs, one client per file. In-process mode only.
    #[arg(long, env = "TFL_CLIENTS", required_unless_present = "serve")]
    pub clients: Option<PathBuf>,
    #[arg(long, default_value_t = 10, env = "TFL_ROUNDS")]
    pub rounds: usize,
    /// Share of registered clients sampled per round.
    #[arg(long, default_value_t = 1.0, env = "TFL_FRACTION")]
    pub fraction: f64,
    /// Average by training-sample count instead of uniformly.
    #[arg(long, env = "TFL_WEIGHTED")]
    pub weighted: bool,
    /// Client k (in file order, from 0) joins at round k + 1.
    #[arg(long, env = "TFL_INCREMENTAL")]
    pub incremental: bool,
    /// Serve the rounds on this address instead of running in-process.
    #[arg(long, env = "TFL_SERVE", conflicts_with = "incremental")]
    pub serve: Option<String>,
    /// Clients to wait for before the first round.
    #[arg(long, env = "TFL_EXPECT_CLIENTS", requires = "serve")]
    pub expect_clients: Option<usize>,
    /// Seconds to wait for all clients to register.
    #[arg(long, default_value_t = 60, env = "TFL_REGISTRATION_TIMEOUT")]
    pub registration_timeout: u64,
    /// Seconds to wait for one client's update.
    #[arg(long, default_value_t = 120, env = "TFL_ROUND_TIMEOUT")]
    pub round_timeout: u64,
    /// Must match the ownership the bootstrap was federated with.
    #[arg(long, value_enum, default_value_t = DenseArg::Local, env = "TFL_DENSE")]
    pub dense: DenseArg,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub window: WindowArgs,
    #[command(flatten)]
    pub training: TrainArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug)]
pub struct ClientArgs {
    /// Aggregator address.
    #[arg(long, env = "TFL_CONNECT")]
    pub connect: String,
    /// This client's trace; the file stem is the client id.
    #[arg(long, env = "TFL_DATA")]
    pub data_file: PathBuf,
    /// Bootstrap weight file, identical to the aggregator's.
    #[arg(long, env = "TFL_BOOTSTRAP")]
    pub bootstrap: PathBuf,
    #[arg(long, default_value_t = 30, env = "TFL_CONNECT_TIMEOUT")]
    pub connect_timeout: u64,
    /// Must match the ownership the bootstrap was federated with.
    #[arg(long, value_enum, default_value_t = DenseArg::Local, env = "TFL_DENSE")]
    pub dense: DenseArg,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub window: WindowArgs,
    #[command(flatten)]
    pub training: TrainArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug)]
pub struct EvalArgs {
    #[arg(long, env = "TFL_MODEL")]
    pub model: PathBuf,
    #[arg(long, env = "TFL_DATA")]
    pub data_file: PathBuf,
    /// Fit the input scaler on the dataset's own train split.
    #[arg(long)]
    pub refit_scaler: bool,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub window: WindowArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug)]
pub struct CrossEvalArgs {
    /// At least two datasets; each is a row and a column of the matrix.
    #[arg(long = "data", env = "TFL_DATA", value_delimiter = ',', num_args = 1.., required = true)]
    pub datasets: Vec<PathBuf>,
    /// ctfl, plain_lstm or baseline.
    #[arg(long, default_value = "ctfl", env = "TFL_KIND")]
    pub kind: ModelKind,
    /// Bootstrap weight file; required for ctfl.
    #[arg(long, env = "TFL_BOOTSTRAP")]
    pub bootstrap: Option<PathBuf>,
    #[arg(long, default_value_t = 128, env = "TFL_HIDDEN")]
    pub hidden: usize,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub window: WindowArgs,
    #[command(flatten)]
    pub training: TrainArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug)]
pub struct AbrSimArgs {
    /// Throughput traces to stream over.
    #[arg(long, env = "TFL_TRACES", value_delimiter = ',', num_args = 1.., required = true)]
    pub traces: Vec<PathBuf>,
    /// Built-in predictors: hm, ewma, ar, oracle.
    #[arg(long, value_delimiter = ',', default_value = "hm,oracle", env = "TFL_PREDICTORS")]
    pub predictors: Vec<String>,
    /// Learned predictor as NAME=WEIGHTS.fpw; repeatable.
    #[arg(long = "model", value_name = "NAME=PATH")]
    pub models: Vec<String>,
    /// Smoothing and history length fed to learned predictors.
    #[arg(long, default_value_t = 2.0, env = "TFL_SIGMA")]
    pub sigma: f64,
    #[arg(long, default_value_t = 5, env = "TFL_HISTORY")]
    pub history: usize,
    #[arg(long, default_value_t = 4.0)]
    pub chunk_s: f64,
    #[arg(long, default_value_t = 30.0)]
    pub buffer_s: f64,
    #[arg(long, default_value_t = 250.0)]
    pub video_s: f64,
    /// MPC lookahead in chunks.
    #[arg(long, default_value_t = 5)]
    pub lookahead: usize,
    /// Comma-separated bitrate ladder in Mbps, ascending.
    #[arg(long, value_delimiter = ',', default_values_t = [6.5, 10.0, 15.0, 25.0, 35.0, 50.0])]
    pub ladder: Vec<f64>,
    /// Penalty per Mbps of bitrate change.
    #[arg(long, default_value_t = 1.0)]
    pub smoothness_penalty: f64,
    /// Penalty per second of rebuffering.
    #[arg(long, default_value_t = 4.3)]
    pub rebuffer_penalty: f64,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Write into this directory instead of the recorded one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Serialize, Deserialize, Clone, Copy, Debug)]
pub enum ScalerArg {
    Minmax,
    Standard,
}

impl From<ScalerArg> for ScalerMode {
    fn from(s: ScalerArg) -> Self {
        match s {
            ScalerArg::Minmax => ScalerMode::MinMax,
            ScalerArg::Standard => ScalerMode::Standard,
        }
    }
}

#[derive(ValueEnum, Serialize, Deserialize, Clone, Copy, Debug)]
pub enum DenseArg {
    Local,
    Global,
}

impl From<DenseArg> for DenseOwnership {
    fn from(d: DenseArg) -> Self {
        match d {
            DenseArg::Local => DenseOwnership::Local,
            DenseArg::Global => DenseOwnership::Global,
        }
    }
}

#[derive(ValueEnum, Serialize, Deserialize, Clone, Copy, Debug)]
pub enum DtypeArg {
    F32,
    F64,
}

impl From<DtypeArg> for Dtype {
    fn from(d: DtypeArg) -> Self {
        match d {
            DtypeArg::F32 => Dtype::F32,
            DtypeArg::F64 => Dtype::F64,
        }
    }
}

#[derive(ValueEnum, Serialize, Deserialize, Clone, Copy, Debug)]
pub enum RegimeArg {
    Smooth,
    Bursty,
    Linear,
}
