//! Self-supervised clustering tasks built from word-drop transformations.
//!
//! A sample picks `K` distinct seed entities from a universe; every cluster
//! holds several independent transformations of one seed, each keeping a
//! contiguous run of the seed's words.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::LabeledSample;
use crate::entity::{Entity, EntitySet};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelfSupConfig {
    /// Inclusive range of the number of clusters.
    pub clusters_range: (usize, usize),
    /// Inclusive range of the members per cluster.
    pub cluster_size_range: (usize, usize),
    /// Range of the fraction of words dropped from a seed.
    pub drop_fraction_range: (f64, f64),
}

impl Default for SelfSupConfig {
    fn default() -> Self {
        Self {
            clusters_range: (2, 10),
            cluster_size_range: (1, 5),
            drop_fraction_range: (0.2, 0.7),
        }
    }
}

impl SelfSupConfig {
    pub fn validate(&self) -> Result<()> {
        let (k0, k1) = self.clusters_range;
        let (s0, s1) = self.cluster_size_range;
        let (f0, f1) = self.drop_fraction_range;
        if k0 == 0 || k0 > k1 {
            return Err(Error::Config(format!("invalid clusters range [{k0}, {k1}]")));
        }
        if s0 == 0 || s0 > s1 {
            return Err(Error::Config(format!("invalid cluster size range [{s0}, {s1}]")));
        }
        if !(f0 > 0.0 && f0 <= f1 && f1 < 1.0) {
            return Err(Error::Config(format!("invalid drop fraction range [{f0}, {f1}]")));
        }
        Ok(())
    }
}

/// Provenance of one generated member.
#[derive(Clone, Debug, PartialEq)]
pub struct WordDrop {
    /// Index of the seed in the universe.
    pub seed: usize,
    pub seed_words: usize,
    pub kept_words: usize,
    /// Drop fraction that was sampled.
    pub fraction: f64,
}

impl WordDrop {
    pub fn measured_fraction(&self) -> f64 {
        1.0 - self.kept_words as f64 / self.seed_words as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelfSupSample {
    pub sample: LabeledSample,
    /// One entry per entity of `sample.set`, in the same order.
    pub drops: Vec<WordDrop>,
}

pub fn generate_selfsup_sample<R: Rng + ?Sized>(
    set_id: &str,
    universe: &[Entity],
    cfg: &SelfSupConfig,
    rng: &mut R,
) -> Result<SelfSupSample> {
    cfg.validate()?;
    if universe.is_empty() {
        return Err(Error::Invalid("self-supervision universe is empty".into()));
    }
    let mut k = rng.gen_range(cfg.clusters_range.0..=cfg.clusters_range.1);
    if k > universe.len() {
        log::warn!(
            "universe has {} entities; using {} clusters instead of {k}",
            universe.len(),
            universe.len()
        );
        k = universe.len();
    }
    let seeds = index::sample(rng, universe.len(), k).into_vec();

    let mut members: Vec<(Entity, WordDrop, usize)> = Vec::new();
    for (c, &seed) in seeds.iter().enumerate() {
        let words: Vec<&str> = universe[seed].text.split_whitespace().collect();
        let w = words.len();
        if w == 0 {
            return Err(Error::Invalid(format!(
                "universe entity `{}` has no words",
                universe[seed].id
            )));
        }
        let size = rng.gen_range(cfg.cluster_size_range.0..=cfg.cluster_size_range.1);
        for m in 0..size {
            let fraction = rng.gen_range(cfg.drop_fraction_range.0..=cfg.drop_fraction_range.1);
            let kept = w.saturating_sub((fraction * w as f64).round() as usize).max(1);
            let start = rng.gen_range(0..=w - kept);
            let entity = Entity::new(
                format!("{}~{m}", universe[seed].id),
                words[start..start + kept].join(" "),
            );
            let drop = WordDrop {
                seed,
                seed_words: w,
                kept_words: kept,
                fraction,
            };
            members.push((entity, drop, c));
        }
    }
    members.shuffle(rng);

    let labels: Vec<usize> = members.iter().map(|m| m.2).collect();
    let drops = members.iter().map(|m| m.1.clone()).collect();
    let set = EntitySet::new(set_id, members.into_iter().map(|m| m.0).collect())?;
    Ok(SelfSupSample {
        sample: LabeledSample::from_labels(set, &labels),
        drops,
    })
}
