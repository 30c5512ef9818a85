//! Optional TOML run config and its merge with command-line flags.
//! Precedence is flags, then file, then built-in defaults; the merged
//! result is what lands in the run manifest.

use std::path::Path;

use clap::ValueEnum;
use prock_core::embed::{TimeConfig, TimeKey, TimeMode};
use prock_core::gnn::{Composition, Flow, GnnConfig, NeighborNorm};
use prock_core::head::TaskKind;
use prock_core::metrics::{SplitSpec, SplitStrategy};
use prock_core::train::{OptimizerKind, SelectionMetric, TrainConfig};
use serde::Deserialize;

use crate::error::{usage, CliError};

// ---------------------------------------------------------------------
// Flag vocabularies
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Binary,
    Multiclass,
    Regression,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CompositionArg {
    Mul,
    Add,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FlowArg {
    Bwd,
    Bidir,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NormArg {
    Sum,
    Mean,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TimeModeArg {
    None,
    Sin,
    Param,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TimeKeyArg {
    Abs,
    Pos,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MetricArg {
    #[value(name = "val_accuracy")]
    ValAccuracy,
    #[value(name = "val_rmse")]
    ValRmse,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Uniform,
    Stratified,
    #[value(name = "temporal_latest")]
    TemporalLatest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitPartArg {
    Train,
    Val,
    Test,
}

impl From<CompositionArg> for Composition {
    fn from(a: CompositionArg) -> Composition {
        match a {
            CompositionArg::Mul => Composition::Multiply,
            CompositionArg::Add => Composition::Add,
        }
    }
}

impl From<FlowArg> for Flow {
    fn from(a: FlowArg) -> Flow {
        match a {
            FlowArg::Bwd => Flow::Backward,
            FlowArg::Bidir => Flow::Bidirectional,
        }
    }
}

impl From<NormArg> for NeighborNorm {
    fn from(a: NormArg) -> NeighborNorm {
        match a {
            NormArg::Sum => NeighborNorm::Sum,
            NormArg::Mean => NeighborNorm::Mean,
        }
    }
}

impl From<TimeModeArg> for TimeMode {
    fn from(a: TimeModeArg) -> TimeMode {
        match a {
            TimeModeArg::None => TimeMode::None,
            TimeModeArg::Sin => TimeMode::Sinusoidal,
            TimeModeArg::Param => TimeMode::Parameterized,
        }
    }
}

impl From<TimeKeyArg> for TimeKey {
    fn from(a: TimeKeyArg) -> TimeKey {
        match a {
            TimeKeyArg::Abs => TimeKey::Absolute,
            TimeKeyArg::Pos => TimeKey::Position,
        }
    }
}

impl From<OptimizerArg> for OptimizerKind {
    fn from(a: OptimizerArg) -> OptimizerKind {
        match a {
            OptimizerArg::Adam => OptimizerKind::Adam,
            OptimizerArg::Sgd => OptimizerKind::Sgd,
        }
    }
}

impl From<MetricArg> for SelectionMetric {
    fn from(a: MetricArg) -> SelectionMetric {
        match a {
            MetricArg::ValAccuracy => SelectionMetric::ValAccuracy,
            MetricArg::ValRmse => SelectionMetric::ValRmse,
        }
    }
}

impl From<StrategyArg> for SplitStrategy {
    fn from(a: StrategyArg) -> SplitStrategy {
        match a {
            StrategyArg::Uniform => SplitStrategy::Uniform,
            StrategyArg::Stratified => SplitStrategy::Stratified,
            StrategyArg::TemporalLatest => SplitStrategy::TemporalLatest,
        }
    }
}

pub fn task_arg_of(task: TaskKind) -> TaskArg {
    match task {
        TaskKind::Binary => TaskArg::Binary,
        TaskKind::Multiclass(_) => TaskArg::Multiclass,
        TaskKind::Regression => TaskArg::Regression,
    }
}

// ---------------------------------------------------------------------
// Config file
// ---------------------------------------------------------------------

/// The TOML run config. Every field is optional; enum-valued fields use
/// the same tokens as the corresponding flags.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub task: Option<String>,
    pub model: ModelSection,
    pub train: TrainSection,
    pub split: SplitSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub dim: Option<usize>,
    pub gc_layers: Option<usize>,
    pub composition: Option<String>,
    pub flow: Option<String>,
    pub neighbor_norm: Option<String>,
    pub time_embedding: Option<String>,
    pub time_buckets: Option<usize>,
    pub time_bucket_size: Option<u64>,
    pub time_key: Option<String>,
    pub bias: Option<bool>,
    pub allow_empty: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub dropout: Option<f64>,
    pub l2: Option<f64>,
    pub l2_all: Option<bool>,
    pub optimizer: Option<String>,
    pub selection_metric: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub strategy: Option<String>,
    pub val_fraction: Option<f64>,
    pub test_fraction: Option<f64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<FileConfig, CliError> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| usage(format!("config {}: {e}", path.display())))
    }
}

/// Parses a config-file token through the matching flag vocabulary.
fn token<T: ValueEnum + Clone>(field: &str, s: &str) -> Result<T, CliError> {
    T::from_str(s, false).map_err(|_| {
        let expected: Vec<String> = T::value_variants()
            .iter()
            .filter_map(|v| v.to_possible_value())
            .map(|p| p.get_name().to_string())
            .collect();
        usage(format!(
            "config file: invalid {field} value {s:?} (expected one of {})",
            expected.join(", ")
        ))
    })
}

fn opt_token<T: ValueEnum + Clone>(
    field: &str,
    s: &Option<String>,
) -> Result<Option<T>, CliError> {
    s.as_deref().map(|s| token(field, s)).transpose()
}

// ---------------------------------------------------------------------
// Flag groups and merged settings
// ---------------------------------------------------------------------

#[derive(Debug, clap::Args)]
pub struct ModelFlags {
    /// Embedding dimension d (nodes, relations, and the head all share it).
    #[arg(long)]
    pub dim: Option<usize>,
    /// Graph-convolution layers; 0 leaves the embedding tables untouched.
    #[arg(long)]
    pub gc_layers: Option<usize>,
    /// How a relation embedding combines with a neighbor embedding.
    #[arg(long, value_enum)]
    pub composition: Option<CompositionArg>,
    /// Message direction: written edge direction only, or both ways.
    #[arg(long, value_enum)]
    pub flow: Option<FlowArg>,
    /// Neighbor aggregation: plain sum or degree-normalized mean.
    #[arg(long, value_enum)]
    pub neighbor_norm: Option<NormArg>,
    /// Timestamp embedding added to each event's pooled attributes.
    #[arg(long, value_enum)]
    pub time_embedding: Option<TimeModeArg>,
    /// Rows in the learned time-bucket table (param mode).
    #[arg(long)]
    pub time_buckets: Option<usize>,
    /// Time units per bucket (param mode with absolute key).
    #[arg(long)]
    pub time_bucket_size: Option<u64>,
    /// What the bucket index is keyed on: absolute time or position.
    /// Defaults to pos for next-event runs and abs otherwise.
    #[arg(long, value_enum)]
    pub time_key: Option<TimeKeyArg>,
    /// Add bias rows to the prediction head.
    #[arg(long)]
    pub bias: bool,
    /// Score cases with no events as a zero vector instead of failing.
    #[arg(long)]
    pub allow_empty: bool,
}

#[derive(Debug, clap::Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Dropout rate in [0, 1), applied after each GC layer and the hidden
    /// head layer during training.
    #[arg(long)]
    pub dropout: Option<f64>,
    /// L2 penalty weight over the weight matrices.
    #[arg(long)]
    pub l2: Option<f64>,
    /// Extend the L2 penalty to embedding tables and biases too.
    #[arg(long)]
    pub l2_all: bool,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
    /// What picks the best epoch on the validation set.
    #[arg(long, value_enum)]
    pub selection_metric: Option<MetricArg>,
}

#[derive(Debug, clap::Args)]
pub struct SplitFlags {
    #[arg(long, value_enum)]
    pub split_strategy: Option<StrategyArg>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
}

/// Everything the train command needs after merging flags and file.
#[derive(Debug)]
pub struct ModelSettings {
    pub dim: usize,
    pub gnn: GnnConfig,
    pub time: TimeConfig,
    pub bias: bool,
    pub allow_empty: bool,
}

pub fn resolve_model(
    flags: &ModelFlags,
    file: &ModelSection,
    next_event: bool,
) -> Result<ModelSettings, CliError> {
    let gnn_default = GnnConfig::default();
    let time_default = TimeConfig::default();
    let composition: Option<CompositionArg> =
        flags.composition.or(opt_token("composition", &file.composition)?);
    let flow: Option<FlowArg> = flags.flow.or(opt_token("flow", &file.flow)?);
    let norm: Option<NormArg> =
        flags.neighbor_norm.or(opt_token("neighbor_norm", &file.neighbor_norm)?);
    let mode: Option<TimeModeArg> =
        flags.time_embedding.or(opt_token("time_embedding", &file.time_embedding)?);
    let key: Option<TimeKeyArg> = flags.time_key.or(opt_token("time_key", &file.time_key)?);
    let key = key.map(TimeKey::from).unwrap_or(if next_event {
        TimeKey::Position
    } else {
        TimeKey::Absolute
    });
    Ok(ModelSettings {
        dim: flags.dim.or(file.dim).unwrap_or(TrainConfig::default().embedding_dim),
        gnn: GnnConfig {
            layers: flags.gc_layers.or(file.gc_layers).unwrap_or(gnn_default.layers),
            composition: composition.map(Composition::from).unwrap_or(gnn_default.composition),
            flow: flow.map(Flow::from).unwrap_or(gnn_default.flow),
            neighbor_norm: norm.map(NeighborNorm::from).unwrap_or(gnn_default.neighbor_norm),
        },
        time: TimeConfig {
            mode: mode.map(TimeMode::from).unwrap_or(time_default.mode),
            buckets: flags.time_buckets.or(file.time_buckets).unwrap_or(time_default.buckets),
            bucket_size: flags
                .time_bucket_size
                .or(file.time_bucket_size)
                .unwrap_or(time_default.bucket_size),
            key,
            ..time_default
        },
        bias: flags.bias || file.bias.unwrap_or(false),
        allow_empty: flags.allow_empty || file.allow_empty.unwrap_or(false),
    })
}

pub fn resolve_train(
    flags: &TrainFlags,
    file: &TrainSection,
    dim: usize,
    seed: u64,
) -> Result<TrainConfig, CliError> {
    let d = TrainConfig::default();
    let optimizer: Option<OptimizerArg> =
        flags.optimizer.or(opt_token("optimizer", &file.optimizer)?);
    let metric: Option<MetricArg> =
        flags.selection_metric.or(opt_token("selection_metric", &file.selection_metric)?);
    Ok(TrainConfig {
        learning_rate: flags.learning_rate.or(file.learning_rate).unwrap_or(d.learning_rate),
        epochs: flags.epochs.or(file.epochs).unwrap_or(d.epochs),
        embedding_dim: dim,
        batch_size: flags.batch_size.or(file.batch_size).unwrap_or(d.batch_size),
        dropout_rate: flags.dropout.or(file.dropout).unwrap_or(d.dropout_rate),
        l2_weight: flags.l2.or(file.l2).unwrap_or(d.l2_weight),
        l2_all: flags.l2_all || file.l2_all.unwrap_or(false),
        optimizer: optimizer.map(OptimizerKind::from).unwrap_or(d.optimizer),
        selection_metric: metric.map(SelectionMetric::from).unwrap_or(d.selection_metric),
        seed,
    })
}

pub fn resolve_split(
    flags: &SplitFlags,
    file: &SplitSection,
    seed: u64,
) -> Result<SplitSpec, CliError> {
    let d = SplitSpec::default();
    let strategy: Option<StrategyArg> =
        flags.split_strategy.or(opt_token("strategy", &file.strategy)?);
    Ok(SplitSpec {
        strategy: strategy.map(SplitStrategy::from).unwrap_or(d.strategy),
        val_fraction: flags.val_fraction.or(file.val_fraction).unwrap_or(d.val_fraction),
        test_fraction: flags.test_fraction.or(file.test_fraction).unwrap_or(d.test_fraction),
        seed,
    })
}
