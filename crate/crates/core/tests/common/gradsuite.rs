//! Finite-difference checks of every tape operation and of the three losses
//! on top of a small encoder.

#![allow(dead_code)]

use std::sync::Arc;

use cactus_kit_core::agglomerative::Clustering;
use cactus_kit_core::data::LabeledSample;
use cactus_kit_core::encoder::{
    entity_attention, AttentionMode, AttentionSpec, EncoderConfig, ForwardStats, SetEncoder,
};
use cactus_kit_core::entity::EntitySet;
use cactus_kit_core::loss::{
    augmented_triplet_loss_op, build_triplets, hinge_margin, pairwise_bce_loss_op, similarity_matrix, triplet_loss_op,
    LossKind, SimilarityMatrix,
};
use cactus_kit_core::numeric::gradcheck::max_param_rel_error;
use cactus_kit_core::numeric::{ParamId, ParamStore, Tape, Tensor, Var};
use cactus_kit_core::train::set_objective;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const OP_TOLERANCE: f64 = 1e-5;
pub const ENCODER_TOLERANCE: f64 = 1e-4;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect()).unwrap()
}

/// Reduces any output to a scalar with fixed random weights, so every
/// output entry receives a distinct upstream gradient.
fn weighted_sum(tape: &mut Tape, y: Var, seed: u64) -> Var {
    let shape = tape.value(y).shape().to_vec();
    let w = random_tensor(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed), &shape);
    let w = tape.constant(w);
    let prod = tape.mul(y, w).unwrap();
    tape.sum(prod)
}

/// Relative error between the tape gradient and central differences of
/// `f` with respect to every tensor in `store`.
fn check(store: &ParamStore, f: impl Fn(&mut Tape, &ParamStore, &[ParamId]) -> Var) -> f64 {
    let ids: Vec<ParamId> = store.ids().collect();
    let mut tape = Tape::new();
    let out = f(&mut tape, store, &ids);
    let grads = tape.backward(out).unwrap();
    max_param_rel_error(store, &grads, STEP, |s| {
        let mut t = Tape::new();
        let out = f(&mut t, s, &ids);
        t.value(out).item()
    })
}

fn store_of(tensors: Vec<(&str, Tensor)>) -> ParamStore {
    let mut s = ParamStore::new();
    for (name, t) in tensors {
        s.insert(name, t, true);
    }
    s
}

/// Random values kept at least `gap` away from zero.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor {
    let mut t = random_tensor(rng, shape);
    for v in t.data_mut() {
        if v.abs() < gap {
            *v = if *v < 0.0 { -gap - 0.1 } else { gap + 0.1 };
        }
    }
    t
}

/// Worst relative error of each tape operation for one random draw.
pub fn op_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let s = store_of(vec![
        ("a", random_tensor(&mut rng, &[3, 4])),
        ("b", random_tensor(&mut rng, &[4, 2])),
    ]);
    out.push((
        "matmul",
        check(&s, |t, s, id| {
            let (a, b) = (t.param(s, id[0]), t.param(s, id[1]));
            let y = t.matmul(a, b).unwrap();
            weighted_sum(t, y, seed)
        }),
    ));

    let s = store_of(vec![
        ("a", random_tensor(&mut rng, &[3, 3])),
        ("b", random_tensor(&mut rng, &[3, 3])),
    ]);
    for (name, which) in [("add", 0), ("sub", 1), ("mul", 2)] {
        out.push((
            name,
            check(&s, |t, s, id| {
                let (a, b) = (t.param(s, id[0]), t.param(s, id[1]));
                let y = match which {
                    0 => t.add(a, b),
                    1 => t.sub(a, b),
                    _ => t.mul(a, b),
                }
                .unwrap();
                weighted_sum(t, y, seed)
            }),
        ));
    }

    let s = store_of(vec![("x", random_tensor(&mut rng, &[2, 5]))]);
    out.push((
        "scale",
        check(&s, |t, s, id| {
            let x = t.param(s, id[0]);
            let y = t.scale(x, -1.7);
            weighted_sum(t, y, seed)
        }),
    ));
    out.push((
        "sum",
        check(&s, |t, s, id| {
            let x = t.param(s, id[0]);
            let y = t.mul(x, x).unwrap();
            t.sum(y)
        }),
    ));

    let s = store_of(vec![("x", away_from_zero(&mut rng, &[3, 4], 1e-3))]);
    out.push((
        "relu",
        check(&s, |t, s, id| {
            let x = t.param(s, id[0]);
            let y = t.relu(x);
            weighted_sum(t, y, seed)
        }),
    ));

    let s = store_of(vec![
        ("x", random_tensor(&mut rng, &[1, 1])),
        ("y", random_tensor(&mut rng, &[1, 1])),
    ]);
    out.push((
        "sum_scalars",
        check(&s, |t, s, id| {
            let (x, y) = (t.param(s, id[0]), t.param(s, id[1]));
            let xy = t.mul(x, y).unwrap();
            let x = t.sum(x);
            let xy = t.sum(xy);
            t.sum_scalars(&[x, xy]).unwrap()
        }),
    ));

    let s = store_of(vec![("x", random_tensor(&mut rng, &[3, 4]))]);
    let mask: Vec<bool> = (0..12).map(|i| i % 4 != 1 || i == 5).collect();
    out.push((
        "softmax_rows",
        check(&s, |t, s, id| {
            let x = t.param(s, id[0]);
            let y = t.softmax_rows(x, None).unwrap();
            weighted_sum(t, y, seed)
        }),
    ));
    out.push((
        "softmax_rows (masked)",
        check(&s, |t, s, id| {
            let x = t.param(s, id[0]);
            let y = t.softmax_rows(x, Some(&mask)).unwrap();
            weighted_sum(t, y, seed)
        }),
    ));

    let s = store_of(vec![("x", random_tensor(&mut rng, &[4, 3]))]);
    out.push((
        "mean_pool",
        check(&s, |t, s, id| {
            let x = t.param(s, id[0]);
            let y = t.mean_pool(x).unwrap();
            weighted_sum(t, y, seed)
        }),
    ));
    out.push((
        "segment_mean",
        check(&s, |t, s, id| {
            let x = t.param(s, id[0]);
            let y = t.segment_mean(x, &[0..1, 1..4]).unwrap();
            weighted_sum(t, y, seed)
        }),
    ));
    out.push((
        "gather_rows",
        check(&s, |t, s, id| {
            let x = t.param(s, id[0]);
            let y = t.gather_rows(x, &[2, 0, 2]).unwrap();
            weighted_sum(t, y, seed)
        }),
    ));

    let s = store_of(vec![
        ("x", random_tensor(&mut rng, &[3, 4])),
        ("g", random_tensor(&mut rng, &[4])),
    ]);
    out.push((
        "rms_norm",
        check(&s, |t, s, id| {
            let (x, g) = (t.param(s, id[0]), t.param(s, id[1]));
            let y = t.rms_norm(x, g, 1e-6).unwrap();
            weighted_sum(t, y, seed)
        }),
    ));

    let s = store_of(vec![
        ("u", random_tensor(&mut rng, &[5])),
        ("v", random_tensor(&mut rng, &[5])),
    ]);
    out.push((
        "cosine",
        check(&s, |t, s, id| {
            let (u, v) = (t.param(s, id[0]), t.param(s, id[1]));
            t.cosine(u, v).unwrap()
        }),
    ));

    let s = store_of(vec![("e", random_tensor(&mut rng, &[5, 4]))]);
    out.push((
        "similarity_matrix",
        check(&s, |t, s, id| {
            let e = t.param(s, id[0]);
            let y = similarity_matrix(t, e).unwrap();
            weighted_sum(t, y, seed)
        }),
    ));

    for mode in AttentionMode::ALL {
        out.push((mode_label(mode), attention_error(&mut rng, mode, seed)));
    }

    out.extend(loss_errors(&mut rng));
    out
}

fn mode_label(mode: AttentionMode) -> &'static str {
    match mode {
        AttentionMode::Nia => "entity_attention (nia)",
        AttentionMode::SiaHidMean => "entity_attention (sia-hid)",
        AttentionMode::SiaKvMean => "entity_attention (sia-kv)",
        AttentionMode::SiaFirst => "entity_attention (sia-first)",
        AttentionMode::Fia => "entity_attention (fia)",
    }
}

fn attention_error(rng: &mut ChaCha8Rng, mode: AttentionMode, seed: u64) -> f64 {
    let segments = vec![0..2, 2..3, 3..6];
    let (t_len, d, heads, buckets) = (6, 4, 2, 4);
    let mut tensors = vec![
        ("q", random_tensor(rng, &[t_len, d])),
        ("k", random_tensor(rng, &[t_len, d])),
        ("v", random_tensor(rng, &[t_len, d])),
        ("bias", random_tensor(rng, &[heads, buckets])),
    ];
    if mode.is_sia() {
        tensors.push(("rk", random_tensor(rng, &[segments.len(), d])));
        tensors.push(("rv", random_tensor(rng, &[segments.len(), d])));
    }
    let spec = AttentionSpec {
        mode,
        n_heads: heads,
        buckets,
        max_distance: 8,
    };
    let s = store_of(tensors);
    check(&s, |t, s, id| {
        let vars: Vec<Var> = id.iter().map(|&i| t.param(s, i)).collect();
        let reps = mode.is_sia().then(|| (vars[4], vars[5]));
        let mut stats = ForwardStats::default();
        let y = entity_attention(t, vars[0], vars[1], vars[2], vars[3], reps, &segments, spec, &mut stats).unwrap();
        weighted_sum(t, y, seed)
    })
}

/// The three losses on random embeddings, differentiated through the
/// similarity matrix and (for the augmented loss) the neutral similarity.
/// Draws too close to a hinge kink are redrawn.
fn loss_errors(rng: &mut ChaCha8Rng) -> Vec<(&'static str, f64)> {
    let truth = Clustering::from_labels("loss", &[0, 0, 1, 1, 2]);
    let idx = Arc::new(build_triplets(&truth));
    let mut out = Vec::new();
    for kind in LossKind::ALL {
        let (emb, neutral) = loop {
            let emb = random_tensor(rng, &[5, 4]);
            let neutral: f64 = rng.gen_range(-0.5..=0.5);
            let sim = SimilarityMatrix::from_embeddings(&emb).unwrap();
            if hinge_margin(&sim, &truth, kind, 0.3, neutral) >= 1e-3 {
                break (emb, neutral);
            }
        };
        let s = store_of(vec![("e", emb), ("s_neu", Tensor::scalar(neutral))]);
        let name = match kind {
            LossKind::Triplet => "triplet loss",
            LossKind::AugTriplet => "augmented triplet loss (incl. s_neu)",
            LossKind::Bce => "pairwise bce loss",
        };
        out.push((
            name,
            check(&s, |t, s, id| {
                let e = t.param(s, id[0]);
                let neu = t.param(s, id[1]);
                let sim = similarity_matrix(t, e).unwrap();
                match kind {
                    LossKind::Triplet => triplet_loss_op(t, sim, idx.clone(), 0.3),
                    LossKind::AugTriplet => augmented_triplet_loss_op(t, sim, neu, idx.clone(), 0.3),
                    LossKind::Bce => pairwise_bce_loss_op(t, sim, Arc::new(truth.clone())),
                }
            }),
        ));
    }
    out
}

const WORDS: &[&str] = &[
    "glue", "stick", "paint", "wax", "candle", "tape", "magnetic", "red", "blue", "lamp", "oak", "pine",
];

/// 2-layer, d = 8 encoder used by the composite checks.
pub fn tiny_encoder(mode: AttentionMode, seed: u64) -> SetEncoder {
    SetEncoder::new(EncoderConfig {
        vocab_size: 64,
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        ffn_dim: 12,
        attention_mode: mode,
        seed,
        ..EncoderConfig::default()
    })
    .unwrap()
}

/// Outcome of one composite check.
pub enum Composite {
    Checked {
        err: f64,
        neutral_err: Option<f64>,
    },
    /// The draw lies within 1e-3 of a ReLU or hinge kink.
    Skipped,
}

/// Encoder + loss gradient check for one seed. The neutral similarity is
/// set to a random nonzero value so its gradient is exercised.
pub fn composite_error(mode: AttentionMode, kind: LossKind, seed: u64) -> Composite {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let texts: Vec<String> = (0..5)
        .map(|_| {
            let l = rng.gen_range(1..=3);
            (0..l)
                .map(|_| *WORDS.choose(&mut rng).unwrap())
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    let set = EntitySet::from_texts("composite", &texts).unwrap();
    let truth = Clustering::from_labels("composite", &[0, 1, 0, 2, 1]);
    let sample = LabeledSample {
        set,
        truth: truth.clone(),
    };
    let mut enc = tiny_encoder(mode, seed);
    let nid = enc.neutral_id();
    *enc.params_mut().value_mut(nid) = Tensor::scalar(rng.gen_range(-0.3..=0.3));
    let o = set_objective(&enc, &sample, kind, 0.3).unwrap().unwrap();
    let hinge = hinge_margin(&o.similarities, &truth, kind, 0.3, enc.neutral_similarity());
    if o.stats.relu_margin < 1e-3 || hinge < 1e-3 {
        return Composite::Skipped;
    }
    let mut probe = enc.clone();
    let mut loss = |p: &ParamStore| {
        *probe.params_mut() = p.clone();
        set_objective(&probe, &sample, kind, 0.3).unwrap().unwrap().loss
    };
    let err = max_param_rel_error(enc.params(), &o.grads, STEP, &mut loss);
    let neutral_err = (kind == LossKind::AugTriplet).then(|| {
        let analytic = o.grads.get(nid).cloned().unwrap_or_else(|| Tensor::scalar(0.0));
        let s0 = enc.neutral_similarity();
        let up = {
            let mut e = enc.clone();
            *e.params_mut().value_mut(nid) = Tensor::scalar(s0 + STEP);
            set_objective(&e, &sample, kind, 0.3).unwrap().unwrap().loss
        };
        let down = {
            let mut e = enc.clone();
            *e.params_mut().value_mut(nid) = Tensor::scalar(s0 - STEP);
            set_objective(&e, &sample, kind, 0.3).unwrap().unwrap().loss
        };
        let numeric = (up - down) / (2.0 * STEP);
        (analytic.item() - numeric).abs() / analytic.item().abs().max(numeric.abs()).max(1e-8)
    });
    Composite::Checked { err, neutral_err }
}

/// Summary over seeds: (checked draws, skipped draws, worst error, worst
/// neutral-similarity error) for one mode and loss.
pub fn composite_summary(mode: AttentionMode, kind: LossKind, seeds: std::ops::Range<u64>) -> (usize, usize, f64, f64) {
    let (mut checked, mut skipped, mut worst, mut worst_neutral) = (0, 0, 0.0f64, 0.0f64);
    for seed in seeds {
        match composite_error(mode, kind, seed) {
            Composite::Checked { err, neutral_err } => {
                checked += 1;
                worst = worst.max(err);
                worst_neutral = worst_neutral.max(neutral_err.unwrap_or(0.0));
            }
            Composite::Skipped => skipped += 1,
        }
    }
    (checked, skipped, worst, worst_neutral)
}
