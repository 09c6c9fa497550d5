use cactus_kit_core::agglomerative::SelectionCriterion;
use cactus_kit_core::data::{generate_synthetic_benchmark, LabeledSample, SelfSupConfig, Split, SyntheticConfig};
use cactus_kit_core::encoder::{Checkpoint, EncoderConfig, SetEncoder};
use cactus_kit_core::loss::LossKind;
use cactus_kit_core::numeric::ParamStore;
use cactus_kit_core::train::{
    batch_loss, evaluate, finetune, pretrain, selfsup_batch, sweep, train_step, universe_from_samples, Optimizer,
    OptimizerState, TrainConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Data {
    train: Vec<LabeledSample>,
    valid: Vec<LabeledSample>,
    test: Vec<LabeledSample>,
}

fn data() -> Data {
    let cfg = SyntheticConfig {
        sets: 40,
        test_sets: 8,
        valid_sets: 8,
        ..Default::default()
    };
    let all = generate_synthetic_benchmark(&cfg, &mut ChaCha8Rng::seed_from_u64(21)).unwrap();
    let part = |split| {
        all.iter()
            .filter(|(_, s)| *s == Some(split))
            .map(|(x, _)| x.clone())
            .collect()
    };
    Data {
        train: part(Split::Train),
        valid: part(Split::Valid),
        test: part(Split::Test),
    }
}

fn tiny(seed: u64) -> Checkpoint {
    Checkpoint::new(
        SetEncoder::new(EncoderConfig {
            d_model: 16,
            n_heads: 2,
            ffn_dim: 24,
            vocab_size: 512,
            seed,
            ..EncoderConfig::default()
        })
        .unwrap(),
    )
}

fn same_params(a: &ParamStore, b: &ParamStore) -> bool {
    a.ids().into_iter().all(|id| a.get(id) == b.get(id))
}

fn quick(loss: LossKind) -> TrainConfig {
    TrainConfig {
        lr: 3e-3,
        epochs: 2,
        pretrain_batches: 5,
        loss,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_pretraining_batches_change_nothing() {
    let d = data();
    let mut ck = tiny(0);
    let before = ck.encoder.params().clone();
    let cfg = TrainConfig {
        pretrain_batches: 0,
        ..quick(LossKind::AugTriplet)
    };
    let report = pretrain(
        &mut ck,
        &universe_from_samples(&d.train),
        &SelfSupConfig::default(),
        &cfg,
    )
    .unwrap();
    assert_eq!(report.batches, 0);
    assert!(same_params(&before, ck.encoder.params()));
}

#[test]
fn pretraining_is_deterministic_and_moves_the_weights() {
    let d = data();
    let universe = universe_from_samples(&d.train);
    let run = || {
        let mut ck = tiny(1);
        let r = pretrain(
            &mut ck,
            &universe,
            &SelfSupConfig::default(),
            &quick(LossKind::AugTriplet),
        )
        .unwrap();
        (ck, r)
    };
    let (a, ra) = run();
    let (b, rb) = run();
    assert_eq!(ra, rb);
    assert_eq!(ra.batches, 5);
    assert!(same_params(a.encoder.params(), b.encoder.params()));
    assert!(!same_params(a.encoder.params(), tiny(1).encoder.params()));
    assert_eq!(a.meta.pretrain_batches, 5);
    // batches are pure in (seed, index)
    let cfg = SelfSupConfig::default();
    assert_eq!(
        selfsup_batch(&universe, &cfg, 4, 2, 3).unwrap(),
        selfsup_batch(&universe, &cfg, 4, 2, 3).unwrap()
    );
}

#[test]
fn pretraining_needs_a_universe() {
    let mut ck = tiny(0);
    assert!(pretrain(&mut ck, &[], &SelfSupConfig::default(), &quick(LossKind::AugTriplet)).is_err());
}

#[test]
fn one_small_step_lowers_the_batch_loss() {
    let d = data();
    let batch = &d.train[..4];
    for loss in LossKind::ALL {
        let mut ck = tiny(2);
        let cfg = TrainConfig {
            lr: 1e-3,
            optimizer: Optimizer::Sgd,
            loss,
            ..TrainConfig::default()
        };
        let before = batch_loss(&ck.encoder, batch, loss, cfg.margin).unwrap().unwrap();
        let reported = train_step(&mut ck.encoder, &mut OptimizerState::default(), batch, &cfg)
            .unwrap()
            .unwrap();
        let after = batch_loss(&ck.encoder, batch, loss, cfg.margin).unwrap().unwrap();
        assert_eq!(reported, before);
        assert!(after < before, "{loss}: {before} -> {after}");
    }
}

#[test]
fn finetuning_keeps_the_best_epoch() {
    let d = data();
    let cfg = TrainConfig {
        epochs: 3,
        ..quick(LossKind::AugTriplet)
    };
    let res = finetune(&tiny(3), &d.train, &d.valid, &cfg).unwrap();
    assert_eq!(res.history.len(), 3);
    let best = res
        .history
        .iter()
        .fold(None::<&cactus_kit_core::train::EpochRecord>, |b, r| match b {
            Some(b) if b.score >= r.score => Some(b),
            _ => Some(r),
        })
        .unwrap();
    assert_eq!(res.best.meta.epoch, Some(best.epoch));
    assert_eq!(res.best.meta.threshold, Some(best.threshold));
    assert_eq!(res.best.meta.loss, Some(LossKind::AugTriplet));
    // the stored weights reproduce the stored validation score
    let again = sweep(&res.best.encoder, &d.valid, cfg.criterion, 16).unwrap();
    assert_eq!(again.result.best_score, best.score);
}

#[test]
fn finetuning_is_deterministic_and_loss_dependent() {
    let d = data();
    let a = finetune(&tiny(4), &d.train, &d.valid, &quick(LossKind::AugTriplet)).unwrap();
    let b = finetune(&tiny(4), &d.train, &d.valid, &quick(LossKind::AugTriplet)).unwrap();
    let c = finetune(&tiny(4), &d.train, &d.valid, &quick(LossKind::Triplet)).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.best.to_bytes().unwrap(), b.best.to_bytes().unwrap());
    assert_ne!(a.best.to_bytes().unwrap(), c.best.to_bytes().unwrap());
}

#[test]
fn finetuning_rejects_empty_inputs() {
    let d = data();
    let cfg = quick(LossKind::Bce);
    assert!(finetune(&tiny(0), &[], &d.valid, &cfg).is_err());
    assert!(finetune(&tiny(0), &d.train, &[], &cfg).is_err());
    let bad = TrainConfig { lr: 0.0, ..cfg };
    assert!(finetune(&tiny(0), &d.train, &d.valid, &bad).is_err());
}

#[test]
fn untrained_baseline_sweeps_every_threshold() {
    let d = data();
    let ck = tiny(5);
    let s = sweep(&ck.encoder, &d.valid, SelectionCriterion::CombinedSum, 3).unwrap();
    assert_eq!(s.result.rows.len(), 21);
    assert!(s.failed.is_empty());
    let e = evaluate(&ck.encoder, &d.test, s.result.best_threshold, 3).unwrap();
    assert_eq!(e.sets.len(), d.test.len());
    // chunking does not change results
    let e1 = evaluate(&ck.encoder, &d.test, s.result.best_threshold, 1).unwrap();
    assert_eq!(e.means, e1.means);
    // at θ = -1 everything merges
    let top = evaluate(&ck.encoder, &d.test, -1.0, 4).unwrap();
    assert!(top.sets.iter().all(|s| s.scores.k_pred == 1));
}
