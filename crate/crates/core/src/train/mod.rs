//! Pretraining on self-supervised tasks, finetuning with checkpoint
//! selection, and corpus evaluation.

mod ablation;
mod optim;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agglomerative::{agglomerate, sweep_threshold, Clustering, SelectionCriterion, SweepResult};
use crate::data::{generate_selfsup_sample, LabeledSample, SelfSupConfig};
use crate::encoder::{Checkpoint, ForwardStats, SetEncoder};
use crate::entity::{Entity, EntitySet};
use crate::error::{Error, Result};
use crate::loss::{loss_on_tape, similarity_matrix, LossKind, SimilarityMatrix, DEFAULT_MARGIN};
use crate::metrics::{MetricMeans, Scores};
use crate::numeric::{Gradients, Tape};
use crate::seed::derive_seed;

pub use ablation::{run_ablation, AblationConfig, AblationRow};
pub use optim::{optimizer_step, Optimizer, OptimizerState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    /// Entity sets accumulated per optimizer step.
    pub batch_size: usize,
    /// Entity sets encoded per parallel chunk during evaluation.
    pub eval_batch_size: usize,
    pub epochs: usize,
    pub pretrain_batches: usize,
    pub loss: LossKind,
    pub margin: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub criterion: SelectionCriterion,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 4,
            eval_batch_size: 16,
            epochs: 10,
            pretrain_batches: 20_000,
            loss: LossKind::AugTriplet,
            margin: DEFAULT_MARGIN,
            seed: 0,
            optimizer: Optimizer::default(),
            criterion: SelectionCriterion::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(Error::Config("batch sizes must be at least 1".into()));
        }
        if !(self.margin > 0.0) {
            return Err(Error::Config(format!("margin must be positive, got {}", self.margin)));
        }
        Ok(())
    }
}

/// Loss and parameter gradients of one set.
#[derive(Clone, Debug)]
pub struct SetObjective {
    pub loss: f64,
    pub grads: Gradients,
    pub stats: ForwardStats,
    pub similarities: SimilarityMatrix,
}

/// Runs the encoder and loss on one sample and back-propagates.
///
/// `None` when the sample contributes no loss term (no triplet, or a single
/// entity for BCE).
pub fn set_objective(
    encoder: &SetEncoder,
    sample: &LabeledSample,
    loss: LossKind,
    margin: f64,
) -> Result<Option<SetObjective>> {
    let tokens = encoder.tokenize_set(&sample.set)?;
    let mut tape = Tape::new();
    let mut stats = ForwardStats::default();
    let emb = encoder.forward(&mut tape, &tokens, &mut stats)?;
    let sim = similarity_matrix(&mut tape, emb)?;
    let neutral = encoder.neutral(&mut tape);
    let Some(l) = loss_on_tape(&mut tape, loss, sim, &sample.truth, margin, neutral)? else {
        return Ok(None);
    };
    let value = tape.value(l).item();
    let similarities = SimilarityMatrix::from_tensor_unchecked(tape.value(sim));
    let grads = tape.backward(l)?;
    Ok(Some(SetObjective {
        loss: value,
        grads,
        stats,
        similarities,
    }))
}

/// Mean loss over the contributing sets, without updating anything.
pub fn batch_loss(encoder: &SetEncoder, batch: &[LabeledSample], loss: LossKind, margin: f64) -> Result<Option<f64>> {
    let (sum, count) = batch_gradients(encoder, batch, loss, margin)?;
    Ok((count > 0).then(|| sum.0 / count as f64))
}

// Per-set objectives run in parallel; summation follows batch order.
fn batch_gradients(
    encoder: &SetEncoder,
    batch: &[LabeledSample],
    loss: LossKind,
    margin: f64,
) -> Result<((f64, Gradients), usize)> {
    let objectives: Vec<Result<Option<SetObjective>>> = batch
        .par_iter()
        .map(|s| set_objective(encoder, s, loss, margin))
        .collect();
    let mut total = Gradients::default();
    let mut loss_sum = 0.0;
    let mut count = 0;
    for o in objectives {
        if let Some(o) = o? {
            if !o.loss.is_finite() {
                return Err(Error::Diverged(format!("loss became {}", o.loss)));
            }
            loss_sum += o.loss;
            total.accumulate(&o.grads, 1.0);
            count += 1;
        }
    }
    Ok(((loss_sum, total), count))
}

/// One accumulated optimizer step. Returns the mean loss of the contributing
/// sets, or `None` (and no update) when none contributes.
pub fn train_step(
    encoder: &mut SetEncoder,
    state: &mut OptimizerState,
    batch: &[LabeledSample],
    cfg: &TrainConfig,
) -> Result<Option<f64>> {
    let ((loss_sum, mut grads), count) = batch_gradients(encoder, batch, cfg.loss, cfg.margin)?;
    if count == 0 {
        return Ok(None);
    }
    grads.scale(1.0 / count as f64);
    optimizer_step(encoder.params_mut(), &grads, state, cfg.optimizer, cfg.lr)?;
    Ok(Some(loss_sum / count as f64))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub batches: usize,
    /// Mean loss of every batch that contributed.
    pub batch_losses: Vec<f64>,
}

/// Self-supervised samples for pretraining batch `b`; pure in `(seed, b)`.
pub fn selfsup_batch(
    universe: &[Entity],
    cfg: &SelfSupConfig,
    seed: u64,
    b: usize,
    size: usize,
) -> Result<Vec<LabeledSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("selfsup-batch-{b}")));
    (0..size)
        .map(|i| generate_selfsup_sample(&format!("selfsup-{b}-{i}"), universe, cfg, &mut rng).map(|s| s.sample))
        .collect()
}

/// Trains with the augmented triplet loss on generated self-supervised
/// tasks for `cfg.pretrain_batches` batches.
pub fn pretrain(
    checkpoint: &mut Checkpoint,
    universe: &[Entity],
    selfsup: &SelfSupConfig,
    cfg: &TrainConfig,
) -> Result<PretrainReport> {
    cfg.validate()?;
    selfsup.validate()?;
    if universe.is_empty() {
        return Err(Error::Invalid("pretraining universe is empty".into()));
    }
    let step_cfg = TrainConfig {
        loss: LossKind::AugTriplet,
        ..cfg.clone()
    };
    let seed = derive_seed(cfg.seed, "pretrain");
    let mut state = OptimizerState::default();
    let mut report = PretrainReport::default();
    for b in 0..cfg.pretrain_batches {
        let batch = selfsup_batch(universe, selfsup, seed, b, cfg.batch_size)?;
        if let Some(l) = train_step(&mut checkpoint.encoder, &mut state, &batch, &step_cfg)? {
            report.batch_losses.push(l);
        }
        report.batches += 1;
        if (b + 1) % 1000 == 0 {
            log::info!(
                "pretrain batch {}/{}: loss {:.4}",
                b + 1,
                cfg.pretrain_batches,
                report.batch_losses.last().unwrap_or(&f64::NAN)
            );
        }
    }
    checkpoint.meta.pretrain_batches += cfg.pretrain_batches;
    Ok(report)
}

/// Entities of all samples, deduplicated by text, as a pretraining universe.
pub fn universe_from_samples(samples: &[LabeledSample]) -> Vec<Entity> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for s in samples {
        for e in &s.set.entities {
            if seen.insert(e.text.clone()) {
                out.push(Entity::new(format!("u{}", out.len()), e.text.clone()));
            }
        }
    }
    out
}

/// Validation outcome of one finetuning epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub threshold: f64,
    pub validation: MetricMeans,
    pub score: f64,
    pub failed_sets: usize,
}

#[derive(Clone, Debug)]
pub struct FinetuneResult {
    pub best: Checkpoint,
    pub history: Vec<EpochRecord>,
}

/// Supervised training; keeps the epoch with the best validation criterion
/// (earliest on ties) together with its threshold.
pub fn finetune(
    checkpoint: &Checkpoint,
    train: &[LabeledSample],
    valid: &[LabeledSample],
    cfg: &TrainConfig,
) -> Result<FinetuneResult> {
    cfg.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(Error::Invalid("finetuning needs nonempty train and valid sets".into()));
    }
    if cfg.epochs == 0 {
        return Err(Error::Config("epochs must be at least 1".into()));
    }
    let mut current = checkpoint.clone();
    let mut state = OptimizerState::default();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("finetune-epoch-{epoch}")));
        order.shuffle(&mut rng);
        let mut losses = Vec::new();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<LabeledSample> = chunk.iter().map(|&i| train[i].clone()).collect();
            if let Some(l) = train_step(&mut current.encoder, &mut state, &batch, cfg)? {
                losses.push(l);
            }
        }
        let train_loss = if losses.is_empty() {
            0.0
        } else {
            losses.iter().sum::<f64>() / losses.len() as f64
        };

        let sweep = sweep(&current.encoder, valid, cfg.criterion, cfg.eval_batch_size)?;
        let record = EpochRecord {
            epoch,
            train_loss,
            threshold: sweep.result.best_threshold,
            validation: sweep.best_means(),
            score: sweep.result.best_score,
            failed_sets: sweep.failed.len(),
        };
        log::info!(
            "epoch {epoch}: loss {train_loss:.4}, threshold {:.1}, score {:.4}",
            record.threshold,
            record.score
        );
        if best.as_ref().is_none_or(|(s, _)| record.score > *s) {
            let mut snapshot = current.clone();
            snapshot.meta.epoch = Some(epoch);
            snapshot.meta.threshold = Some(record.threshold);
            snapshot.meta.validation = Some(record.validation);
            snapshot.meta.validation_score = Some(record.score);
            snapshot.meta.loss = Some(cfg.loss);
            best = Some((record.score, snapshot));
        }
        history.push(record);
    }
    Ok(FinetuneResult {
        best: best.unwrap().1,
        history,
    })
}

/// Similarity matrices of every sample, in input order.
pub fn similarities(encoder: &SetEncoder, sets: &[&EntitySet], chunk: usize) -> Vec<Result<SimilarityMatrix>> {
    sets.par_chunks(chunk.max(1))
        .flat_map_iter(|c| {
            c.iter()
                .map(|s| {
                    encoder
                        .encode_set(s)
                        .and_then(|e| SimilarityMatrix::from_embeddings(&e))
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Metrics of one evaluated set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetEval {
    pub set_id: String,
    #[serde(flatten)]
    pub scores: Scores,
}

/// Evaluation of a corpus at one threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub threshold: f64,
    pub epoch: Option<usize>,
    pub sets: Vec<SetEval>,
    pub means: MetricMeans,
    pub failed: Vec<FailedSet>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailedSet {
    pub set_id: String,
    pub error: String,
}

fn sorted_by_id(samples: &[LabeledSample]) -> Vec<&LabeledSample> {
    let mut v: Vec<&LabeledSample> = samples.iter().collect();
    v.sort_by(|a, b| a.set_id().cmp(b.set_id()));
    v
}

/// Clusters every sample at `threshold` and scores it against its truth.
/// Sets the encoder cannot process are reported and left out of the means.
pub fn evaluate(encoder: &SetEncoder, samples: &[LabeledSample], threshold: f64, chunk: usize) -> Result<EvalRecord> {
    if !(-1.0..=1.0).contains(&threshold) {
        return Err(Error::Config(format!("threshold {threshold} outside [-1, 1]")));
    }
    let sorted = sorted_by_id(samples);
    let sets: Vec<&EntitySet> = sorted.iter().map(|s| &s.set).collect();
    let sims = similarities(encoder, &sets, chunk);
    let mut record = EvalRecord {
        threshold,
        epoch: None,
        sets: Vec::new(),
        means: MetricMeans::default(),
        failed: Vec::new(),
    };
    for (sample, sim) in sorted.iter().zip(sims) {
        match sim {
            Ok(sim) => {
                let (pred, _) = agglomerate(sample.set_id(), &sim, threshold);
                record.sets.push(SetEval {
                    set_id: sample.set_id().to_string(),
                    scores: Scores::compute(&sample.truth, &pred)?,
                });
            }
            Err(e) => record.failed.push(FailedSet {
                set_id: sample.set_id().to_string(),
                error: e.to_string(),
            }),
        }
    }
    let scores: Vec<Scores> = record.sets.iter().map(|s| s.scores).collect();
    record.means = MetricMeans::of(&scores);
    Ok(record)
}

/// Threshold sweep over a validation corpus.
#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub result: SweepResult,
    pub failed: Vec<FailedSet>,
}

impl SweepOutcome {
    pub fn best_means(&self) -> MetricMeans {
        self.result
            .rows
            .iter()
            .find(|r| r.threshold == self.result.best_threshold)
            .map(|r| r.means)
            .unwrap_or_default()
    }
}

pub fn sweep(
    encoder: &SetEncoder,
    samples: &[LabeledSample],
    criterion: SelectionCriterion,
    chunk: usize,
) -> Result<SweepOutcome> {
    let sorted = sorted_by_id(samples);
    let sets: Vec<&EntitySet> = sorted.iter().map(|s| &s.set).collect();
    let sims = similarities(encoder, &sets, chunk);
    let mut pairs: Vec<(SimilarityMatrix, Clustering)> = Vec::new();
    let mut failed = Vec::new();
    for (sample, sim) in sorted.iter().zip(sims) {
        match sim {
            Ok(s) => pairs.push((s, sample.truth.clone())),
            Err(e) => failed.push(FailedSet {
                set_id: sample.set_id().to_string(),
                error: e.to_string(),
            }),
        }
    }
    Ok(SweepOutcome {
        result: sweep_threshold(&pairs, criterion)?,
        failed,
    })
}

/// Predicted clustering of one set at `threshold`.
pub fn predict(encoder: &SetEncoder, set: &EntitySet, threshold: f64) -> Result<Clustering> {
    let sim = SimilarityMatrix::from_embeddings(&encoder.encode_set(set)?)?;
    Ok(agglomerate(&set.set_id, &sim, threshold).0)
}
