//! Attention-mode degeneracies, reported as worst deviations.

#![allow(dead_code)]

use cactus_kit_core::encoder::{AttentionMode, EncoderConfig, SetEncoder};
use cactus_kit_core::entity::EntitySet;
use cactus_kit_core::numeric::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn small(mode: AttentionMode, seed: u64) -> SetEncoder {
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

const WORDS: &[&str] = &[
    "glue", "stick", "paint", "wax", "candle", "tape", "magnetic", "red", "blue", "lamp", "oak", "pine",
];

pub fn random_set(rng: &mut ChaCha8Rng, id: &str, n: usize, max_len: usize) -> EntitySet {
    let texts: Vec<String> = (0..n)
        .map(|_| {
            let l = rng.gen_range(1..=max_len);
            (0..l)
                .map(|_| *WORDS.choose(rng).unwrap())
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    EntitySet::from_texts(id, &texts).unwrap()
}

pub fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Largest gap between NIA and any mode on single-entity sets.
pub fn single_entity_vs_nia(sets: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for s in 0..sets {
        let set = random_set(&mut rng, "one", 1, 6);
        let base = small(AttentionMode::Nia, s).encode_set(&set).unwrap();
        for mode in AttentionMode::ALL {
            worst = worst.max(max_diff(&base, &small(mode, s).encode_set(&set).unwrap()));
        }
    }
    worst
}

/// Largest gap between FIA and the SIA variants when every entity is one token.
pub fn one_token_sia_vs_fia(sets: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for s in 0..sets {
        let n = rng.gen_range(2..=6);
        let set = random_set(&mut rng, "short", n, 1);
        let fia = small(AttentionMode::Fia, s).encode_set(&set).unwrap();
        for mode in [
            AttentionMode::SiaHidMean,
            AttentionMode::SiaKvMean,
            AttentionMode::SiaFirst,
        ] {
            worst = worst.max(max_diff(&fia, &small(mode, s).encode_set(&set).unwrap()));
        }
    }
    worst
}

/// Largest row mismatch after permuting entities, over all modes.
pub fn permutation_equivariance(sets: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for s in 0..sets {
        let n = rng.gen_range(2..=6);
        let set = random_set(&mut rng, "perm", n, 4);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        for mode in AttentionMode::ALL {
            let enc = small(mode, s);
            let a = enc.encode_set(&set).unwrap();
            let b = enc.encode_set(&set.permuted(&perm)).unwrap();
            for (new, &old) in perm.iter().enumerate() {
                let d = a
                    .row(old)
                    .iter()
                    .zip(b.row(new))
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max);
                worst = worst.max(d);
            }
        }
    }
    worst
}
