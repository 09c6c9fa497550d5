//! The six-entity configuration where the plain triplet loss is already
//! minimal but average-link clustering still merges the wrong clusters.
//!
//! Entities are y1, y2, g1, g2, b1, b2 (indices 0..6): a loose yellow pair,
//! and tight green and blue pairs that are mutually closer than yellow is to
//! itself.

#![allow(dead_code)]

use cactus_kit_core::agglomerative::{agglomerate, Clustering, Merge};
use cactus_kit_core::loss::{augmented_triplet_loss, build_triplets, triplet_loss, SimilarityMatrix};

pub const MARGIN: f64 = 0.3;

pub fn similarities() -> SimilarityMatrix {
    let group = [0, 0, 1, 1, 2, 2];
    let mut v = vec![0.0; 36];
    for i in 0..6 {
        for k in 0..6 {
            v[i * 6 + k] = if i == k {
                1.0
            } else if group[i] == group[k] {
                if group[i] == 0 {
                    0.1
                } else {
                    0.6
                }
            } else if group[i] == 0 || group[k] == 0 {
                -0.25
            } else {
                0.2
            };
        }
    }
    SimilarityMatrix::from_values(6, v).unwrap()
}

pub fn truth() -> Clustering {
    Clustering::from_labels("loose-pair", &[0, 0, 1, 1, 2, 2])
}

/// The 201-point grid `-1, -0.99, …, 1`.
pub fn neutral_grid() -> Vec<f64> {
    (0..=200).map(|i| -1.0 + i as f64 / 100.0).collect()
}

pub struct LoosePair {
    pub triplet: f64,
    /// Smallest augmented loss over the neutral grid, and where it occurs.
    pub min_augmented: (f64, f64),
    pub merges: Vec<Merge>,
}

pub fn evaluate() -> LoosePair {
    let sim = similarities();
    let idx = build_triplets(&truth());
    let triplet = triplet_loss(&sim, &idx, MARGIN).unwrap();
    let min_augmented = neutral_grid()
        .into_iter()
        .map(|s| (augmented_triplet_loss(&sim, &idx, MARGIN, s).unwrap(), s))
        .fold((f64::INFINITY, 0.0), |best, x| if x.0 < best.0 { x } else { best });
    let (_, trace) = agglomerate("loose-pair", &sim, -1.0);
    LoosePair {
        triplet,
        min_augmented,
        merges: trace.merges,
    }
}

/// True when green and blue are joined before the yellow pair is.
pub fn green_blue_before_yellow(merges: &[Merge]) -> bool {
    let pos = |pred: &dyn Fn(&Merge) -> bool| merges.iter().position(pred);
    let yellow = pos(&|m: &Merge| (m.a, m.b) == (0, 1));
    let green_blue = pos(&|m: &Merge| (m.a, m.b) == (2, 4));
    let pairs_first = merges.len() >= 2 && (merges[0].a, merges[0].b) == (2, 3) && (merges[1].a, merges[1].b) == (4, 5);
    matches!((green_blue, yellow), (Some(gb), Some(y)) if gb < y) && pairs_first
}
