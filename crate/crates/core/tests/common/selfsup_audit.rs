//! Audit of the self-supervised task generator over many samples.

#![allow(dead_code)]

use cactus_kit_core::agglomerative::{clusterings_equivalent, Clustering};
use cactus_kit_core::data::{generate_selfsup_sample, SelfSupConfig};
use cactus_kit_core::entity::Entity;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 300 seed entities of 1 to 12 distinct words.
pub fn universe(seed: u64) -> Vec<Entity> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..300)
        .map(|i| {
            let w = rng.gen_range(1..=12);
            Entity::new(
                format!("u{i}"),
                (0..w).map(|k| format!("t{i}w{k}")).collect::<Vec<_>>().join(" "),
            )
        })
        .collect()
}

#[derive(Debug, Default)]
pub struct AuditReport {
    pub samples: usize,
    pub members: usize,
    pub violations: Vec<String>,
}

impl AuditReport {
    fn flag(&mut self, message: String) {
        if self.violations.len() < 20 {
            self.violations.push(message);
        }
    }
}

pub fn audit(samples: usize, seed: u64) -> AuditReport {
    let cfg = SelfSupConfig::default();
    let u = universe(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = AuditReport::default();
    for s in 0..samples {
        let id = format!("audit-{s}");
        let out = generate_selfsup_sample(&id, &u, &cfg, &mut rng).unwrap();
        let truth = &out.sample.truth;
        let k = truth.num_clusters();
        if !(2..=10).contains(&k) {
            report.flag(format!("{id}: {k} clusters"));
        }
        for size in truth.cluster_sizes() {
            if !(1..=5).contains(&size) {
                report.flag(format!("{id}: cluster of {size}"));
            }
        }
        for (e, drop) in out.sample.set.entities.iter().zip(&out.drops) {
            // rounding to whole words moves the fraction by at most one word
            let word = 1.0 / drop.seed_words as f64;
            let f = drop.measured_fraction();
            if !(0.2..=0.7).contains(&drop.fraction) || f < 0.2 - word || f > 0.7 + word {
                report.flag(format!("{id}: drop {f} of {} words", drop.seed_words));
            }
            let seed_text = &u[drop.seed].text;
            let contiguous = seed_text.contains(e.text.as_str()) && e.text.split(' ').count() == drop.kept_words;
            if !contiguous || drop.kept_words == 0 {
                report.flag(format!("{id}: `{}` is not a run of `{seed_text}`", e.text));
            }
        }
        let by_seed: Vec<usize> = out.drops.iter().map(|d| d.seed).collect();
        let grouping = Clustering::from_labels(id.clone(), &by_seed);
        if !clusterings_equivalent(truth, &grouping).unwrap() {
            report.flag(format!("{id}: truth differs from seed grouping"));
        }
        report.samples += 1;
        report.members += out.drops.len();
    }
    report
}
