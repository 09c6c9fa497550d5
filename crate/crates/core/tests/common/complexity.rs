//! Attention cost accounting checked against direct enumeration.

#![allow(dead_code)]

use cactus_kit_core::encoder::{count_attention_logits, AttentionMode, EncoderConfig, SetEncoder};
use cactus_kit_core::entity::EntitySet;

/// Counts query/target pairs one by one: own-entity tokens for every mode,
/// plus one representative per other entity (SIA) or every foreign token (FIA).
pub fn enumerate_logits(lengths: &[usize], mode: AttentionMode) -> usize {
    let mut count = 0;
    for (e, &l) in lengths.iter().enumerate() {
        for _query in 0..l {
            for (f, &m) in lengths.iter().enumerate() {
                count += match mode {
                    _ if f == e => m,
                    AttentionMode::Nia => 0,
                    AttentionMode::Fia => m,
                    _ => 1,
                };
            }
        }
    }
    count
}

#[derive(Debug, Default)]
pub struct CountReport {
    pub tuples: usize,
    pub failures: Vec<String>,
}

/// Every length tuple with `N ≤ max` entities of `1..=max` tokens each.
pub fn exhaustive_count_check(max: usize) -> CountReport {
    let mut report = CountReport::default();
    for n in 1..=max {
        let mut lengths = vec![1; n];
        loop {
            let counts: Vec<usize> = AttentionMode::ALL
                .iter()
                .map(|&mode| {
                    let closed = count_attention_logits(&lengths, mode);
                    if closed != enumerate_logits(&lengths, mode) {
                        report.failures.push(format!("{mode} {lengths:?}"));
                    }
                    closed
                })
                .collect();
            let nia = count_attention_logits(&lengths, AttentionMode::Nia);
            let fia = count_attention_logits(&lengths, AttentionMode::Fia);
            if counts.iter().any(|&c| c < nia || c > fia) {
                report.failures.push(format!("cost ordering {lengths:?}: {counts:?}"));
            }
            report.tuples += 1;
            // odometer over 1..=max
            let mut i = 0;
            while i < n && lengths[i] == max {
                lengths[i] = 1;
                i += 1;
            }
            if i == n {
                break;
            }
            lengths[i] += 1;
        }
    }
    report
}

/// A set of `n` entities with `l` distinct words each.
pub fn uniform_set(n: usize, l: usize) -> EntitySet {
    let texts: Vec<String> = (0..n)
        .map(|e| (0..l).map(|w| format!("w{e}x{w}")).collect::<Vec<_>>().join(" "))
        .collect();
    EntitySet::from_texts("bench", &texts).unwrap()
}

/// `(mode, buffer bytes, peak layer bytes, measured logits per head per layer)`
/// for every mode on one set, with the default encoder.
pub fn measured_buffers(n: usize, l: usize) -> Vec<(AttentionMode, usize, usize, usize)> {
    let set = uniform_set(n, l);
    let base = SetEncoder::new(EncoderConfig::default()).unwrap();
    AttentionMode::ALL
        .iter()
        .map(|&mode| {
            let (_, stats) = base.with_mode(mode).encode_set_with_stats(&set).unwrap();
            let layers = base.config().n_layers;
            (
                mode,
                stats.buffer_bytes,
                stats.peak_layer_bytes,
                stats.logits_per_head / layers,
            )
        })
        .collect()
}

/// NIA ≤ every SIA variant ≤ FIA on both buffer measures.
pub fn buffers_ordered(rows: &[(AttentionMode, usize, usize, usize)]) -> bool {
    let get = |m: AttentionMode| rows.iter().find(|r| r.0 == m).copied().unwrap();
    let (nia, fia) = (get(AttentionMode::Nia), get(AttentionMode::Fia));
    rows.iter()
        .all(|r| nia.1 <= r.1 && r.1 <= fia.1 && nia.2 <= r.2 && r.2 <= fia.2)
}
