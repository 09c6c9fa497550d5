use std::path::PathBuf;

use cactus_kit_core::agglomerative::SelectionCriterion;
use cactus_kit_core::data::{Split, SplitSpec};
use cactus_kit_core::encoder::{AttentionMode, EncoderConfig};
use cactus_kit_core::loss::LossKind;
use cactus_kit_core::train::{Optimizer, TrainConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "cactus-kit", version, about = "Supervised clustering of entity sets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic benchmark or self-supervised samples.
    Gen(GenArgs),
    /// Optionally pretrain, then finetune and keep the best checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Cluster unlabelled entity sets.
    Predict(PredictArgs),
    /// Attention cost table over entity counts, lengths and modes.
    BenchAttention(BenchArgs),
    /// Turn raw language-model clusterings into a dataset.
    IngestLlm(IngestArgs),
    /// Train and test every mode × loss × pretraining combination.
    Ablate(AblateArgs),
    /// Re-run a command from its manifest and compare output hashes.
    Rerun(RerunArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Topic-structured benchmark with homonyms.
    #[arg(long, conflicts_with = "selfsup", required_unless_present = "selfsup")]
    pub synthetic: bool,
    /// Word-drop clustering tasks over a universe file.
    #[arg(long)]
    pub selfsup: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 6)]
    pub topics: usize,
    #[arg(long, default_value_t = 700)]
    pub sets: usize,
    #[arg(long, default_value_t = 100)]
    pub test_sets: usize,
    #[arg(long, default_value_t = 100)]
    pub valid_sets: usize,
    #[arg(long, default_value_t = 40)]
    pub words_per_topic: usize,
    #[arg(long, default_value_t = 4)]
    pub homonyms_per_pair: usize,
    #[arg(long, default_value_t = 0.3)]
    pub homonym_rate: f64,
    #[arg(long, default_value_t = 40)]
    pub noise_words: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise_rate: f64,
    /// Sibling topics per family; 1 disables set-dependent granularity.
    #[arg(long, default_value_t = 2)]
    pub topics_per_family: usize,
    /// Share of sets drawn inside one family and clustered by topic.
    #[arg(long, default_value_t = 0.15)]
    pub fine_set_rate: f64,
    /// Universe file (`cactus-kit/universe`) for --selfsup.
    #[arg(long)]
    pub universe: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum CriterionArg {
    CombinedSum,
    Ami,
    Ari,
    F1,
}

impl From<CriterionArg> for SelectionCriterion {
    fn from(c: CriterionArg) -> Self {
        match c {
            CriterionArg::CombinedSum => SelectionCriterion::CombinedSum,
            CriterionArg::Ami => SelectionCriterion::Ami,
            CriterionArg::Ari => SelectionCriterion::Ari,
            CriterionArg::F1 => SelectionCriterion::F1,
        }
    }
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Attention mode: nia, sia-hid, sia-kv, sia-first or fia.
    #[arg(long, default_value = "sia-hid")]
    pub mode: AttentionMode,
    #[arg(long, default_value_t = 32)]
    pub d_model: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 64)]
    pub ffn_dim: usize,
    #[arg(long, default_value_t = 4096)]
    pub vocab: usize,
    #[arg(long, default_value_t = 16)]
    pub rel_buckets: usize,
    #[arg(long, default_value_t = 32)]
    pub max_rel_distance: usize,
    #[arg(long, default_value_t = 2048)]
    pub token_budget: usize,
}

impl ModelArgs {
    pub fn config(&self, seed: u64) -> EncoderConfig {
        EncoderConfig {
            vocab_size: self.vocab,
            d_model: self.d_model,
            n_layers: self.layers,
            n_heads: self.heads,
            ffn_dim: self.ffn_dim,
            attention_mode: self.mode,
            rel_pos_buckets: self.rel_buckets,
            max_rel_distance: self.max_rel_distance,
            token_budget: self.token_budget,
            seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainingArgs {
    /// Loss: triplet, aug-triplet or bce.
    #[arg(long, default_value = "aug-triplet")]
    pub loss: LossKind,
    #[arg(long, default_value_t = 0.3)]
    pub margin: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 4)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 16)]
    pub eval_batch_size: usize,
    #[arg(long, default_value_t = 20_000)]
    pub pretrain_batches: usize,
    #[arg(long, value_enum, default_value = "adam")]
    pub optimizer: OptimizerArg,
    #[arg(long, value_enum, default_value = "combined-sum")]
    pub criterion: CriterionArg,
}

impl TrainingArgs {
    pub fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch_size: self.batch_size,
            eval_batch_size: self.eval_batch_size,
            epochs: self.epochs,
            pretrain_batches: self.pretrain_batches,
            loss: self.loss,
            margin: self.margin,
            seed,
            optimizer: match self.optimizer {
                OptimizerArg::Adam => Optimizer::default(),
                OptimizerArg::Sgd => Optimizer::Sgd,
            },
            criterion: self.criterion.into(),
        }
    }
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset file (`cactus-kit/dataset`).
    #[arg(long)]
    pub data: PathBuf,
    /// Held-out sizes for datasets without recorded splits.
    #[arg(long, default_value_t = 3000)]
    pub split_test: usize,
    #[arg(long, default_value_t = 1000)]
    pub split_valid: usize,
    /// Use only the first N training sets.
    #[arg(long)]
    pub train_limit: Option<usize>,
}

impl DataArgs {
    pub fn split_spec(&self, seed: u64) -> SplitSpec {
        SplitSpec {
            test: self.split_test,
            valid: self.split_valid,
            seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
    /// Run self-supervised pretraining before finetuning.
    #[arg(long)]
    pub pretrain: bool,
    /// Universe for pretraining; defaults to the training entities.
    #[arg(long)]
    pub universe: Option<PathBuf>,
    /// Checkpoint path; the log and manifest are written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitArg {
    Train,
    Valid,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Valid => Split::Valid,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Fixed threshold; defaults to the one stored in the checkpoint.
    #[arg(long, conflicts_with = "sweep", allow_negative_numbers = true)]
    pub threshold: Option<f64>,
    /// Evaluate every threshold from -1 to 1 in steps of 0.1.
    #[arg(long)]
    pub sweep: bool,
    #[arg(long, value_enum, default_value = "combined-sum")]
    pub criterion: CriterionArg,
    #[arg(long, default_value_t = 16)]
    pub eval_batch_size: usize,
    /// Report file (JSON lines).
    #[arg(long)]
    pub out: PathBuf,
    /// Seed of the split shuffle for datasets without recorded splits.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Entity sets (`cactus-kit/dataset`; clusters, if any, are ignored).
    #[arg(long)]
    pub data: PathBuf,
    /// Defaults to the threshold stored in the checkpoint.
    #[arg(long, allow_negative_numbers = true)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Entity counts.
    #[arg(long = "n", value_delimiter = ',', default_value = "1,2,4,8,16")]
    pub entities: Vec<usize>,
    /// Tokens per entity.
    #[arg(long = "l", value_delimiter = ',', default_value = "2,4,8,16,32")]
    pub lengths: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "nia,sia-hid,sia-kv,sia-first,fia")]
    pub modes: Vec<AttentionMode>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Timed forward passes per row (median is reported).
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Raw outputs (`cactus-kit/llm-raw`).
    #[arg(long)]
    pub raw: PathBuf,
    /// Entity sets the outputs refer to.
    #[arg(long)]
    pub sets: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    Off,
    On,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
    #[arg(long, value_delimiter = ',', default_value = "nia,sia-hid,sia-kv,sia-first,fia")]
    pub modes: Vec<AttentionMode>,
    #[arg(long, value_delimiter = ',', default_value = "triplet,aug-triplet,bce")]
    pub losses: Vec<LossKind>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "off,on")]
    pub pretrain_options: Vec<Toggle>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct RerunArgs {
    pub manifest: PathBuf,
}
