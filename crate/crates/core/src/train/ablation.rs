//! Grid over attention mode × loss × self-supervised pretraining.

use serde::{Deserialize, Serialize};

use super::{evaluate, finetune, pretrain, universe_from_samples, TrainConfig};
use crate::data::{SelfSupConfig, Splits};
use crate::encoder::{AttentionMode, Checkpoint, EncoderConfig, SetEncoder};
use crate::error::Result;
use crate::loss::LossKind;
use crate::metrics::MetricMeans;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub modes: Vec<AttentionMode>,
    pub losses: Vec<LossKind>,
    /// Pretraining settings to try; `false` skips self-supervision.
    pub pretrain: Vec<bool>,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub selfsup: SelfSupConfig,
}

impl AblationConfig {
    pub fn full_grid(encoder: EncoderConfig, train: TrainConfig) -> Self {
        Self {
            modes: AttentionMode::ALL.to_vec(),
            losses: LossKind::ALL.to_vec(),
            pretrain: vec![false, true],
            encoder,
            train,
            selfsup: SelfSupConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: AttentionMode,
    pub loss: LossKind,
    pub pretrain: bool,
    pub threshold: f64,
    pub best_epoch: usize,
    pub test: MetricMeans,
    pub failed_sets: usize,
}

/// Trains and tests one model per grid cell. Every cell starts from the same
/// initialisation seed, so cells differ only in the ablated factors.
pub fn run_ablation(cfg: &AblationConfig, data: &Splits) -> Result<Vec<AblationRow>> {
    let universe = universe_from_samples(&data.train);
    let mut rows = Vec::new();
    for &mode in &cfg.modes {
        for &loss in &cfg.losses {
            for &with_pretrain in &cfg.pretrain {
                let encoder = SetEncoder::new(EncoderConfig {
                    attention_mode: mode,
                    ..cfg.encoder.clone()
                })?;
                let mut ck = Checkpoint::new(encoder);
                let train_cfg = TrainConfig {
                    loss,
                    ..cfg.train.clone()
                };
                if with_pretrain {
                    pretrain(&mut ck, &universe, &cfg.selfsup, &train_cfg)?;
                }
                let result = finetune(&ck, &data.train, &data.valid, &train_cfg)?;
                let threshold = result.best.meta.threshold.unwrap_or(0.0);
                let record = evaluate(&result.best.encoder, &data.test, threshold, train_cfg.eval_batch_size)?;
                log::info!(
                    "{mode} / {loss} / pretrain {with_pretrain}: test AMI {:.4}",
                    record.means.ami
                );
                rows.push(AblationRow {
                    mode,
                    loss,
                    pretrain: with_pretrain,
                    threshold,
                    best_epoch: result.best.meta.epoch.unwrap_or(0),
                    test: record.means,
                    failed_sets: record.failed.len(),
                });
            }
        }
    }
    Ok(rows)
}
