//! CTR model, loss, ranking metric, training loop, ablation modes and the
//! downstream transfer model.

mod checkpoint;
mod downstream;
mod metrics;
mod model;
mod pretrain;
mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use downstream::{compute_features, train_downstream, train_downstream_variant, DownstreamConfig, DownstreamReport, Features};
pub use metrics::{bce_loss, evaluate_auc, BCE_EPS};
pub use model::{predict_ctr, Artifacts, Context, CtrModel, ModelConfig, PipelineMode};
pub use pretrain::{lm_loss_and_grad, pretrain_stack, PretrainConfig};
pub use train::{ablation_rows, evaluate, initial_model, workload_params, run_ablation, train, AblationRun, EvalReport, TrainConfig, TrainOutcome};

use thiserror::Error;

use crate::atomic::TableError;
use crate::cost::CostError;
use crate::data::DataError;
use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("{preds} predictions but {labels} labels")]
    LengthMismatch { preds: usize, labels: usize },
    #[error("no examples to score")]
    Empty,
    #[error("AUC needs both classes; all {n} labels are {label}")]
    SingleClass { n: usize, label: u8 },
    #[error("label {0} is not 0 or 1")]
    BadLabel(u8),
    #[error("score at index {0} is not finite")]
    NonFiniteScore(usize),
    #[error("training loss became non-finite at step {step}")]
    DivergedLoss { step: usize },
    #[error("mode {mode} needs a behavior table; run encode and pass it in")]
    MissingTable { mode: PipelineMode },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}
