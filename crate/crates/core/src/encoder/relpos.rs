//! Bidirectional log-bucketed relative positions.
//!
//! Half of the buckets hold keys to the right of the query. Within each half,
//! small offsets get their own bucket and larger ones share logarithmically
//! widening buckets up to `max_distance`; anything further lands in the last.

pub fn bucket(relative: i64, num_buckets: usize, max_distance: usize) -> usize {
    let half = num_buckets / 2;
    let mut base = 0;
    if relative > 0 {
        base = half;
    }
    let n = relative.unsigned_abs() as usize;
    let max_exact = half / 2;
    if n < max_exact {
        return base + n;
    }
    let scaled = ((n as f64 / max_exact as f64).ln() / (max_distance as f64 / max_exact as f64).ln()
        * (half - max_exact) as f64) as usize;
    base + (max_exact + scaled).min(half - 1)
}
