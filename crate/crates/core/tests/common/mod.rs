#![allow(dead_code)]

pub mod complexity;
pub mod degeneracy;
pub mod gradsuite;
pub mod loose_pair;
pub mod oracle;
pub mod selfsup_audit;

/// Deterministic uniform values in `[-1, 1]`.
pub fn uniform(seed: u64, n: usize) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect()
}
